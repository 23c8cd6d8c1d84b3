use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use agepop::asymptotics::projection_properties_check;
use agepop::export::{density_rows, round12, to_json, write_csv};
use agepop::oracle::oracle_evolve_many;
use agepop::{
    assemble_oracle, async_growth_verify, birth_consistency, build_propagator, classify_stability,
    domain_check, find_lambda0, resolvent_apply, simulate, spectral_radius_curve, validate_model,
    Error, GrowthStatus, ModelConfig, ModelSpec, PopulationDensity, Propagator, SemigroupMarch,
    SpectralProjection, Stability, Vector,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser, Debug)]
#[command(
    name = "agepop",
    version,
    about = "Age-structured population semigroup toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve the configured initial density to time T.
    Simulate(Common),
    /// r(Q_λ) over a λ grid.
    Spectrum(Common),
    /// Malthusian parameter λ₀.
    Lambda0(Common),
    /// Stability verdict from r(Q_0).
    Classify(Common),
    /// Resolvent (λ + 𝔸)^{-1} φ with domain residuals.
    Resolvent(Common),
    /// Spectral projection of the initial density.
    Project(Common),
    /// Cross-validation battery.
    Verify(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct Common {
    /// Model configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Tolerance; defaults to `numerics.tol` of the config.
    #[arg(long)]
    tol: Option<f64>,
    /// Time horizon.
    #[arg(long = "t", default_value_t = 1.0)]
    t: f64,
    /// Spectral parameter for `resolvent`; defaults to λ₀ + 1.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = -2.0)]
    lambda_min: f64,
    #[arg(long, default_value_t = 4.0)]
    lambda_max: f64,
    #[arg(long, default_value_t = 25)]
    lambda_steps: usize,
    /// Seed for the randomized checks of `verify`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Exit code 1: the input was rejected.
struct Invalid(String);

enum Failure {
    Invalid(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl From<Invalid> for Failure {
    fn from(e: Invalid) -> Self {
        Failure::Invalid(e.0)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type Run = Result<(), Failure>;

struct Setup {
    cfg: ModelConfig,
    model: ModelSpec,
    prop: Propagator,
    tol: f64,
}

fn setup(args: &Common) -> Result<Setup, Failure> {
    if !args.config.exists() {
        return Err(Invalid(format!(
            "--config: {} does not exist",
            args.config.display()
        ))
        .into());
    }
    let cfg = ModelConfig::load(&args.config)?;
    let model = cfg.build()?;
    let report = validate_model(&model);
    if !(report.metzler_ok && report.birth_nonneg_ok) {
        return Err(Invalid(report.messages.join("; ")).into());
    }
    let tol = args.tol.unwrap_or(cfg.numerics.tol);
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Invalid(format!("--tol: must lie in (0, 1), got {tol}")).into());
    }
    if !(args.t.is_finite() && args.t >= 0.0) {
        return Err(Invalid(format!(
            "--t: must be finite and nonnegative, got {}",
            args.t
        ))
        .into());
    }
    let prop = build_propagator(&model, cfg.numerics.substeps)?;
    Ok(Setup {
        cfg,
        model,
        prop,
        tol,
    })
}

fn emit(args: &Common, text: &[u8]) -> Run {
    match &args.out {
        Some(path) => File::create(path)?.write_all(text)?,
        None => io::stdout().lock().write_all(text)?,
    }
    Ok(())
}

fn emit_json(args: &Common, kind: &str, payload: &Value) -> Run {
    let mut text = to_json(kind, payload)?;
    text.push('\n');
    emit(args, text.as_bytes())
}

fn emit_csv(args: &Common, header: &[&str], rows: &[Vec<f64>]) -> Run {
    let mut buf = Vec::new();
    write_csv(&mut buf, header, rows)?;
    emit(args, &buf)
}

fn density_json(phi: &PopulationDensity) -> Value {
    json!({
        "ages": phi.grid().nodes(),
        "values": phi.values().iter().map(|v| v.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
    })
}

fn emit_density(args: &Common, kind: &str, phi: &PopulationDensity, extra: Value) -> Run {
    match args.format {
        Format::Csv => emit_csv(args, &["age", "component", "value"], &density_rows(phi)),
        Format::Json => {
            let mut body = extra;
            body["density"] = density_json(phi);
            emit_json(args, kind, &body)
        }
    }
}

fn cmd_simulate(args: &Common) -> Run {
    let s = setup(args)?;
    let phi = s.cfg.initial_density(&s.model)?;
    let traj = simulate(&s.model, &s.prop, &phi, args.t)?;
    let last = traj.states.last().expect("trajectory starts with φ");
    match args.format {
        Format::Csv => emit_csv(args, &["age", "component", "value"], &density_rows(last)),
        Format::Json => {
            let births: Vec<Vec<f64>> = traj
                .births
                .values()
                .iter()
                .map(|b| b.iter().copied().collect())
                .collect();
            let body = json!({
                "t": args.t,
                "density": density_json(last),
                "birth_times": traj.times(),
                "births": births,
            });
            emit_json(args, "simulate", &body)
        }
    }
}

fn cmd_spectrum(args: &Common) -> Run {
    if args.lambda_steps < 2 || !(args.lambda_max > args.lambda_min) {
        return Err(Invalid(
            "--lambda-steps must be >= 2 and --lambda-max must exceed --lambda-min".into(),
        )
        .into());
    }
    let s = setup(args)?;
    let h = (args.lambda_max - args.lambda_min) / (args.lambda_steps - 1) as f64;
    let lambdas: Vec<f64> = (0..args.lambda_steps)
        .map(|i| args.lambda_min + h * i as f64)
        .collect();
    let curve = spectral_radius_curve(&s.model, &s.prop, &lambdas, s.tol)?;
    match args.format {
        Format::Csv => {
            let rows: Vec<Vec<f64>> = curve.iter().map(|&(l, r)| vec![l, r]).collect();
            emit_csv(args, &["lambda", "r"], &rows)
        }
        Format::Json => {
            let points: Vec<Value> = curve
                .iter()
                .map(|&(l, r)| json!({"lambda": l, "r": r}))
                .collect();
            emit_json(args, "spectrum", &json!({ "points": points }))
        }
    }
}

fn cmd_lambda0(args: &Common) -> Run {
    let s = setup(args)?;
    let res = find_lambda0(&s.model, &s.prop, s.tol)?;
    match args.format {
        Format::Csv => emit_csv(
            args,
            &["lambda0", "residual", "lo", "hi", "evaluations"],
            &[vec![
                res.lambda0,
                res.residual,
                res.bracket.0,
                res.bracket.1,
                res.evaluations as f64,
            ]],
        ),
        Format::Json => emit_json(
            args,
            "lambda0",
            &serde_json::to_value(res).expect("serializable"),
        ),
    }
}

fn cmd_classify(args: &Common) -> Run {
    let s = setup(args)?;
    let v = classify_stability(&s.model, &s.prop, s.cfg.numerics.eps_band)?;
    match args.format {
        Format::Csv => {
            // Verdict encoded as -1 (stable), 0 (critical), 1 (growth).
            let code = match v.verdict {
                Stability::Stable => -1.0,
                Stability::Critical => 0.0,
                Stability::AsynchronousGrowth => 1.0,
            };
            emit_csv(args, &["verdict", "r_q0"], &[vec![code, v.r_q0]])
        }
        Format::Json => emit_json(
            args,
            "classify",
            &serde_json::to_value(v).expect("serializable"),
        ),
    }
}

fn cmd_resolvent(args: &Common) -> Run {
    let s = setup(args)?;
    let lambda = match args.lambda {
        Some(l) => l,
        None => find_lambda0(&s.model, &s.prop, s.tol)?.lambda0 + 1.0,
    };
    let phi = s.cfg.initial_density(&s.model)?;
    let res = resolvent_apply(&s.model, &s.prop, lambda, &phi)?;
    let resid = domain_check(&s.model, lambda, &phi, &res.psi);
    emit_density(
        args,
        "resolvent",
        &res.psi,
        json!({
            "lambda": lambda,
            "condition": res.condition,
            "pde_residual": resid.pde_residual,
            "bc_residual": resid.bc_residual,
        }),
    )
}

fn cmd_project(args: &Common) -> Run {
    let s = setup(args)?;
    let mal = find_lambda0(&s.model, &s.prop, s.tol)?;
    let proj = SpectralProjection::new(&s.model, &s.prop, &mal)?;
    let phi = s.cfg.initial_density(&s.model)?;
    let out = proj.apply(&phi)?;
    emit_density(
        args,
        "project",
        &out,
        json!({
            "lambda0": mal.lambda0,
            "coefficient": proj.coefficient(&phi),
            "numerator": proj.numerator(&phi),
            "denominator": proj.denominator(),
        }),
    )
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: Value,
}

/// Relative distance `‖oracle − characteristics‖ / (Δa ‖S(t)φ‖)` at a few
/// times up to the horizon.
fn oracle_gap(
    m: &ModelSpec,
    p: &Propagator,
    phi: &PopulationDensity,
    horizon: f64,
) -> Result<Vec<(f64, f64)>, Error> {
    let g = assemble_oracle(m)?;
    let times: Vec<f64> = [0.25, 0.5, 1.0]
        .iter()
        .map(|f| (f * horizon / m.grid.da()).round() * m.grid.da())
        .filter(|&t| t > 0.0)
        .collect();
    let outs = oracle_evolve_many(&g, phi, &times)?;
    let mut march = SemigroupMarch::new(m, p, phi)?;
    let mut gaps = Vec::new();
    for (t, o) in times.iter().zip(outs) {
        while march.time() < t - 1e-9 {
            march.advance();
        }
        let reference = march.density();
        let scale = m.grid.da() * reference.norm().max(f64::MIN_POSITIVE);
        gaps.push((*t, reference.sub(&o).norm() / scale));
    }
    Ok(gaps)
}

/// Largest constant accepted for the relative oracle gap.
const ORACLE_CONSTANT_LIMIT: f64 = 100.0;
/// Oracle checks are skipped above this state dimension.
const ORACLE_SIZE_LIMIT: usize = 8000;

fn cmd_verify(args: &Common) -> Run {
    let s = setup(args)?;
    let (m, p) = (&s.model, &s.prop);
    let phi = s.cfg.initial_density(m)?;
    let da = m.grid.da();
    let horizon = (args.t / da).round().max(1.0) * da;
    let mut checks = Vec::new();

    let report = validate_model(m);
    checks.push(Check {
        name: "validation",
        pass: report.all_ok(),
        detail: json!({"messages": report.messages}),
    });

    let births = simulate(m, p, &phi, horizon)?.births;
    let consistency = birth_consistency(m, p, &births, &phi, horizon)?;
    let scale = births.values().iter().map(|b| b.norm()).fold(1.0, f64::max);
    // First order while t <= a_max: the state jumps on a = t and the plain
    // trapezoid sees only one side of the jump at that node.
    checks.push(Check {
        name: "birth_consistency",
        pass: consistency <= da * scale,
        detail: json!({"residual": consistency, "t": horizon}),
    });

    let lambdas: Vec<f64> = (0..10).map(|i| -1.0 + 0.5 * i as f64).collect();
    let monotone = spectral_radius_curve(m, p, &lambdas, s.tol);
    checks.push(Check {
        name: "monotone_radius",
        pass: monotone.is_ok(),
        detail: match monotone {
            Ok(c) => json!({"points": c.len()}),
            Err(e) => json!({"error": e.to_string()}),
        },
    });

    if m.dim() * m.grid.intervals() <= ORACLE_SIZE_LIMIT {
        let gaps = oracle_gap(m, p, &phi, horizon)?;
        let worst = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
        checks.push(Check {
            name: "oracle_agreement",
            pass: worst <= ORACLE_CONSTANT_LIMIT,
            detail: json!({
                "constant": worst,
                "limit": ORACLE_CONSTANT_LIMIT,
                "times": gaps.iter().map(|g| g.0).collect::<Vec<_>>(),
            }),
        });
    }

    let verdict = classify_stability(m, p, s.cfg.numerics.eps_band)?;
    match find_lambda0(m, p, s.tol) {
        Ok(mal) => {
            checks.push(Check {
                name: "lambda0",
                pass: mal.residual <= s.tol,
                detail: serde_json::to_value(mal).expect("serializable"),
            });
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let samples: Vec<PopulationDensity> = (0..5)
                .map(|_| {
                    let values = (0..m.grid.len())
                        .map(|_| Vector::from_fn(m.dim(), |_, _| rng.random::<f64>()))
                        .collect();
                    PopulationDensity::new(&m.grid, values).expect("sizes match")
                })
                .collect();
            let props = projection_properties_check(m, p, &mal, &samples, horizon.min(3.0))?;
            checks.push(Check {
                name: "projection_properties",
                pass: props.max_idempotency <= 1e-10
                    && props.max_collinearity <= 1e-10
                    && props.max_commutation <= 10.0 * da,
                detail: json!({
                    "idempotency": props.max_idempotency,
                    "collinearity": props.max_collinearity,
                    "commutation": props.max_commutation,
                }),
            });
            if verdict.verdict != Stability::Stable {
                let growth = async_growth_verify(m, p, &mal, &phi, horizon);
                let (pass, detail) = match growth {
                    Ok(r) => (
                        r.status != GrowthStatus::NoDecay,
                        json!({
                            "fitted_rate": r.fitted_rate,
                            "final_error": r.errors.last(),
                            "transient_cutoff": r.transient_cutoff,
                            "status": format!("{:?}", r.status),
                        }),
                    ),
                    Err(e) => (false, json!({"error": e.to_string()})),
                };
                checks.push(Check {
                    name: "async_growth",
                    pass,
                    detail,
                });
            }
        }
        Err(Error::NoMalthusianParameter { bound, r_at_bound }) => checks.push(Check {
            name: "lambda0",
            pass: verdict.verdict == Stability::Stable,
            detail: json!({"note": "no Malthusian parameter in the admissible range", "bound": bound, "r_at_bound": r_at_bound}),
        }),
        Err(e) => return Err(e.into()),
    }

    let all_pass = checks.iter().all(|c| c.pass);
    match args.format {
        Format::Csv => {
            let mut buf = Vec::new();
            writeln!(buf, "check,pass")?;
            for c in &checks {
                writeln!(buf, "{},{}", c.name, c.pass)?;
            }
            emit(args, &buf)?;
        }
        Format::Json => {
            let list: Vec<Value> = checks
                .iter()
                .map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail}))
                .collect();
            emit_json(
                args,
                "verify",
                &json!({"verdict": verdict.verdict, "r_q0": round12(verdict.r_q0), "seed": args.seed, "checks": list, "all_pass": all_pass}),
            )?;
        }
    }
    if all_pass {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        Err(Failure::Numerical(format!(
            "checks failed: {}",
            failed.join(", ")
        )))
    }
}

fn run(cli: Cli) -> Run {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Spectrum(a) => cmd_spectrum(a),
        Command::Lambda0(a) => cmd_lambda0(a),
        Command::Classify(a) => cmd_classify(a),
        Command::Resolvent(a) => cmd_resolvent(a),
        Command::Project(a) => cmd_project(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
