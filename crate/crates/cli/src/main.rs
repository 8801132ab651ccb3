use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use oulab::basis::{canonical_seeds, gram_schmidt_theta, ThetaBasis};
use oulab::covariance::covariance_infinity;
use oulab::example7::{build_example_with, ExamplePreset, TailConvention};
use oulab::galerkin::{build_pair, hypothesis_report, nu_min, rkhs_constant, HypothesisReport};
use oulab::linalg;
use oulab::model::{load_model, SpectralModel};
use oulab::profile::CylinderFunction;
use oulab::quadrature::QuadratureSpec;
use oulab::verify::{convergence_study, solve_and_verify, solve_report};
use oulab::LabError;

#[derive(Parser)]
#[command(name = "oulab", version, about = "Galerkin truncations of Ornstein-Uhlenbeck operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lyapunov residual, RKHS constant, nu and dissipation per (n, eps).
    Check(RunArgs),
    /// Solve lambda V - L V = phi and report the norms of V.
    Solve(RunArgs),
    /// Run the estimate suite and write a verification report.
    Verify(RunArgs),
    /// Successive W^{1,2}_H differences along the ladder, as CSV.
    Converge(RunArgs),
    /// Closed forms and admissibility of the Dirichlet-Laplacian preset.
    Example7(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TailArg {
    Consistent,
    Printed,
}

#[derive(Args)]
struct RunArgs {
    /// Model config (JSON).
    #[arg(long, conflicts_with = "example7")]
    model: Option<PathBuf>,
    /// Preset shorthand q1,q2,q3,N.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    example7: Option<Vec<f64>>,
    /// Tail values of the preset closed forms.
    #[arg(long, value_enum, default_value = "consistent")]
    tail: TailArg,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Frame sizes, e.g. 2,3,4.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<usize>>,
    /// Regularization grid, e.g. 0,0.1,0.01.
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Profile as JSON, e.g. '{"cosine":{"a":[1,0.5],"b":0}}'.
    #[arg(long)]
    phi: Option<String>,
    /// Quadrature overrides as JSON with keys gh_order, qmc_points, laplace_nodes.
    #[arg(long)]
    quad: Option<String>,
}

enum Failure {
    Usage(String),
    Lab(LabError),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        Failure::Lab(e)
    }
}

type Run = Result<i32, Failure>;

struct Loaded {
    model: SpectralModel,
    preset: Option<ExamplePreset>,
}

fn load(args: &RunArgs) -> Result<Loaded, Failure> {
    match (&args.model, &args.example7) {
        (Some(path), None) => Ok(Loaded {
            model: load_model(path)?,
            preset: None,
        }),
        (None, Some(v)) => {
            if v.len() != 4 || v[3].fract() != 0.0 || v[3] < 1.0 {
                return Err(Failure::Usage(format!(
                    "--example7 expects q1,q2,q3,N with integer N, got {v:?}"
                )));
            }
            let tail = match args.tail {
                TailArg::Consistent => TailConvention::Consistent,
                TailArg::Printed => TailConvention::Printed,
            };
            let preset = build_example_with(v[0], v[1], v[2], v[3] as usize, tail)?;
            Ok(Loaded {
                model: preset.model.clone(),
                preset: Some(preset),
            })
        }
        _ => Err(Failure::Usage("exactly one of --model or --example7 is required".into())),
    }
}

fn quad_spec(args: &RunArgs) -> Result<QuadratureSpec, Failure> {
    let seed = args.seed.ok_or_else(|| Failure::Usage("seed required (--seed)".into()))?;
    let mut spec = QuadratureSpec::with_seed(seed);
    if let Some(text) = &args.quad {
        let v: serde_json::Value = serde_json::from_str(text).map_err(|e| LabError::Parse(e.to_string()))?;
        let obj = v
            .as_object()
            .ok_or_else(|| LabError::Parse("--quad must be a JSON object".into()))?;
        for (key, val) in obj {
            let n = val
                .as_u64()
                .ok_or_else(|| LabError::Parse(format!("--quad.{key} must be a nonnegative integer")))?;
            match key.as_str() {
                "gh_order" => spec.gh_order = n as usize,
                "qmc_points" => spec.qmc_points = n as usize,
                "laplace_nodes" => spec.laplace_nodes = n as usize,
                "seed" => return Err(Failure::Usage("pass the seed with --seed".into())),
                _ => return Err(LabError::Parse(format!("unknown --quad key {key}")).into()),
            }
        }
    }
    spec.validate()?;
    Ok(spec)
}

fn profile(args: &RunArgs) -> Result<CylinderFunction, Failure> {
    match &args.phi {
        Some(text) => Ok(CylinderFunction::from_json(text)?),
        None => Ok(CylinderFunction::Cosine { a: vec![1.0], b: 0.0 }),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|source| {
            Failure::Lab(LabError::Io {
                path: path.display().to_string(),
                source,
            })
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Number of independent directions of `Q_inf`.
fn frame_width(q_inf: &DMatrix<f64>) -> usize {
    let eig = linalg::sym_eigenvalues(q_inf);
    let top = eig.iter().cloned().fold(0.0, f64::max);
    eig.iter().filter(|&&e| e > 1e-12 * top).count()
}

#[derive(Serialize)]
struct CheckReport {
    model: String,
    dim: usize,
    degenerate: bool,
    lyapunov_residual: f64,
    c_rkhs: Option<f64>,
    frame_width: usize,
    hypotheses: Vec<HypothesisReport>,
}

fn cmd_check(args: &RunArgs) -> Run {
    let loaded = load(args)?;
    let model = &loaded.model;
    let degenerate = !model.degeneracy(1e-12).nondegenerate;
    let eps = args.eps.clone().unwrap_or_else(|| vec![0.0]);
    if degenerate && !eps.iter().any(|&e| e > 0.0) {
        return Err(LabError::RegularizationRequired.into());
    }
    let pack = covariance_infinity(model)?;
    let width = frame_width(&pack.q_inf);
    let ladder = args.ladder.clone().unwrap_or_else(|| (1..=width).collect());
    let max_n = ladder.iter().copied().max().unwrap_or(1);
    let basis = gram_schmidt_theta(&pack.q_inf, &canonical_seeds(model.dim), max_n)?;
    let c_rkhs = rkhs_constant(model, &pack.q_inf).ok();
    let nu_formula = loaded.preset.as_ref().and_then(|p| p.nu_formula);
    let mut hypotheses = Vec::new();
    for &e in &eps {
        for &n in &ladder {
            let pair = build_pair(model, &pack.q_inf, &basis, n, e)?;
            hypotheses.push(hypothesis_report(&pair, c_rkhs, nu_formula));
        }
    }
    let ok = hypotheses.iter().all(|h| h.nu_holds && h.details.q_min_eigenvalue > 0.0);
    let report = CheckReport {
        model: model.label.clone(),
        dim: model.dim,
        degenerate,
        lyapunov_residual: pack.lyap_residual,
        c_rkhs,
        frame_width: width,
        hypotheses,
    };
    emit(args.out.as_deref(), &to_json(&report))?;
    Ok(if ok { 0 } else { 2 })
}

fn default_ladder(phi: &CylinderFunction) -> Vec<usize> {
    vec![phi.arity().max(1)]
}

fn cmd_solve(args: &RunArgs) -> Run {
    let quad = quad_spec(args)?;
    let loaded = load(args)?;
    let phi = profile(args)?;
    let ladder = args.ladder.clone().unwrap_or_else(|| default_ladder(&phi));
    let eps = args.eps.clone().unwrap_or_else(|| vec![0.0]);
    let report = solve_report(&loaded.model, args.lambda, &phi, &ladder, &eps, &quad)?;
    emit(args.out.as_deref(), &to_json(&report))?;
    Ok(0)
}

fn cmd_verify(args: &RunArgs) -> Run {
    let quad = quad_spec(args)?;
    let loaded = load(args)?;
    let phi = profile(args)?;
    let ladder = args.ladder.clone().unwrap_or_else(|| default_ladder(&phi));
    let eps = args.eps.clone().unwrap_or_else(|| vec![0.0]);
    let report = solve_and_verify(&loaded.model, args.lambda, &phi, &ladder, &eps, &quad)?;
    emit(args.out.as_deref(), &to_json(&report))?;
    Ok(report.exit_code())
}

fn cmd_converge(args: &RunArgs) -> Run {
    let quad = quad_spec(args)?;
    let loaded = load(args)?;
    let phi = profile(args)?;
    let ladder = args.ladder.clone().unwrap_or_else(|| default_ladder(&phi));
    let table = convergence_study(&loaded.model, args.lambda, &phi, &ladder, &quad)?;
    emit(args.out.as_deref(), &table.to_csv())?;
    Ok(0)
}

#[derive(Serialize)]
struct ExampleReport {
    q: [f64; 3],
    dim: usize,
    tail: TailConvention,
    q_inf_closed: Vec<Vec<f64>>,
    b_closed: Vec<Vec<f64>>,
    admissible: bool,
    admissibility_lhs: f64,
    sufficient_condition: bool,
    nu_formula: Option<f64>,
    /// `(m, nu_min)` on the raw coordinate frame for m = 2..N.
    nu_min: Vec<(usize, f64)>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn cmd_example7(args: &RunArgs) -> Run {
    if args.example7.is_none() {
        return Err(Failure::Usage("example7 needs --example7 q1,q2,q3,N".into()));
    }
    let preset = load(args)?.preset.expect("preset loaded");
    let q_inf = covariance_infinity(&preset.model)?.q_inf;
    let raw = ThetaBasis::from_frame(&q_inf, DMatrix::identity(preset.dim, preset.dim))?;
    let mut nus = Vec::new();
    for m in 2..=preset.dim {
        nus.push((m, nu_min(&build_pair(&preset.model, &q_inf, &raw, m, 0.0)?)?));
    }
    let report = ExampleReport {
        q: [preset.q1, preset.q2, preset.q3],
        dim: preset.dim,
        tail: preset.tail,
        q_inf_closed: rows(&preset.q_inf_closed),
        b_closed: rows(&preset.b_closed),
        admissible: preset.admissibility.admissible,
        admissibility_lhs: preset.admissibility.lhs,
        sufficient_condition: preset.admissibility.sufficient,
        nu_formula: preset.nu_formula,
        nu_min: nus,
    };
    emit(args.out.as_deref(), &to_json(&report))?;
    Ok(if preset.admissibility.admissible { 0 } else { 2 })
}

fn exit_for(e: &LabError) -> u8 {
    match e {
        LabError::Io { .. }
        | LabError::Parse(_)
        | LabError::InvalidArgument(_)
        | LabError::InvalidQuadrature(_)
        | LabError::DimensionMismatch(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Converge(a) => cmd_converge(a),
        Command::Example7(a) => cmd_example7(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lab(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
