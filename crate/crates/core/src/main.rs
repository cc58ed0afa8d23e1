use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;
use serde_json::{Map, Value};

use ipslab::config::{ConfigError, CutoffSetting, ExperimentConfig, Task};
use ipslab::cutoff::Cutoff;
use ipslab::experiments::{chaos_coupling, rate_sweep};
use ipslab::grid::GridField;
use ipslab::io::{self, json_number};
use ipslab::kernel::{KernelError, KernelFamily, KernelSpec};
use ipslab::kr::{kr_distance, KrOptions, Measure};
use ipslab::measures::{deposit_un, WeightedPointSet};
use ipslab::particles::{simulate, SimConfig};
use ipslab::pde::{compute_cutoff_a, PdeRun, PdeSolver, RunStatus};
use ipslab::quadrature::TanhSinh;
use ipslab::rates::{
    best_alpha, best_alpha_singular, sobolev_rate_exponent, theoretical_rate, theoretical_rate_singular, Exponent,
    Scalar,
};

#[derive(Parser)]
#[command(name = "ipslab", version, about = "Moderately interacting particle systems with singular kernels")]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `particles.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "MC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the assumption report of a kernel.
    Kernels(KernelArgs),
    /// Solve the PDE and write its norm trace and snapshots.
    Pde,
    /// Run one particle system and write positions and u^N snapshots.
    Simulate,
    /// Convergence-rate sweep over the configured particle counts.
    Rate,
    /// Coupling gap against McKean-Vlasov copies.
    Chaos,
    /// Kantorovich-Rubinstein distance between two snapshot files.
    Distance {
        a: PathBuf,
        b: PathBuf,
        /// Coarse-grid cells per axis for large supports.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
    },
    /// Rate calculators.
    Rates {
        #[command(subcommand)]
        command: RatesCommand,
    },
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    family: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    s: Option<f64>,
    #[arg(long)]
    attractive: bool,
    #[arg(long)]
    chi: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    va: Option<f64>,
    #[arg(long)]
    vb: Option<f64>,
    /// Integrability exponent for the drift bound constant.
    #[arg(long)]
    r: Option<String>,
}

#[derive(Subcommand)]
enum RatesCommand {
    /// Evaluate rate formulas; numbers may be written as fractions like 1/6.
    Calc(CalcArgs),
}

#[derive(Args)]
struct CalcArgs {
    #[arg(long)]
    d: usize,
    #[arg(long, default_value = "1")]
    zeta: String,
    #[arg(long, default_value = "inf")]
    r: String,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    best_alpha: bool,
    /// Use the singular-class formulas.
    #[arg(long)]
    singular: bool,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    r_tilde: Option<String>,
    #[arg(long)]
    delta: Option<String>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let pool = match cli.threads {
        Some(0) => {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        Some(n) => rayon::ThreadPoolBuilder::new().num_threads(n).build(),
        None => rayon::ThreadPoolBuilder::new().build(),
    };
    let pool = match pool {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Failure::Validation(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.display().to_string();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Kernels(args) => kernels(cli, args),
        Command::Pde => {
            let cfg = load_config(cli)?;
            cfg.validate(Task::Pde)?;
            pde(&cfg)
        }
        Command::Simulate => {
            let cfg = load_config(cli)?;
            cfg.validate(Task::Simulate)?;
            simulate_cmd(&cfg)
        }
        Command::Rate => {
            let cfg = load_config(cli)?;
            cfg.validate(Task::Rate)?;
            rate(&cfg)
        }
        Command::Chaos => {
            let cfg = load_config(cli)?;
            cfg.validate(Task::Chaos)?;
            chaos(&cfg)
        }
        Command::Distance { a, b, resolution } => distance(a, b, *resolution),
        Command::Rates { command: RatesCommand::Calc(args) } => calc(args),
    }
}

fn kernels(cli: &Cli, args: &KernelArgs) -> Result<(), Failure> {
    let (family, d) = match &args.family {
        Some(name) => {
            let f = match name.as_str() {
                "zero" => KernelFamily::Zero,
                "riesz" => KernelFamily::Riesz { s: args.s.unwrap_or(0.0), attractive: args.attractive },
                "coulomb" => KernelFamily::Coulomb,
                "biot-savart" => KernelFamily::BiotSavart,
                "keller-segel" => KernelFamily::KellerSegel { chi: args.chi.unwrap_or(8.0 * std::f64::consts::PI) },
                "attractive-repulsive" => KernelFamily::AttractiveRepulsive {
                    a: args.a.unwrap_or(0.5),
                    b: args.b.unwrap_or(0.25),
                    va: args.va.unwrap_or(1.0),
                    vb: args.vb.unwrap_or(1.0),
                },
                other => return Err(Failure::Validation(format!("unknown kernel family `{other}`"))),
            };
            (f, args.d.unwrap_or(2))
        }
        None => {
            let cfg = load_config(cli)?;
            (cfg.kernel, args.d.unwrap_or(cfg.d))
        }
    };
    let kernel = KernelSpec::new(family, d).map_err(|e| Failure::Validation(e.to_string()))?;
    println!("{}", kernel.assumption_report());
    if let Some(r) = &args.r {
        let r = parse_real(r).map_err(Failure::Validation)?;
        match kernel.drift_bound_constant(r, &TanhSinh::default()) {
            Ok(b) => println!("drift bound constant at r = {r}: {:.16e} (p = {}, q = {})", b.constant, b.p, b.q),
            Err(KernelError::DivergentNorm(m)) => return Err(Failure::Validation(m)),
            Err(e) => return Err(runtime(e)),
        }
    }
    Ok(())
}

fn out_path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    Path::new(&cfg.output_dir).join(name)
}

fn write(path: PathBuf, text: &str) -> Result<(), Failure> {
    io::write_bytes(&path, text.as_bytes()).map_err(runtime)
}

fn reference_run(cfg: &ExperimentConfig) -> Result<PdeRun, Failure> {
    let grid = cfg.grid_spec();
    let solver = PdeSolver::new(grid, &cfg.kernel_spec()).map_err(runtime)?;
    let u0 = cfg.initial_law().on_grid(grid);
    solver.solve(&u0, &cfg.pde_config()).map_err(runtime)
}

fn status_fields(run: &PdeRun) -> Map<String, Value> {
    let mut m = Map::new();
    match run.status {
        RunStatus::Completed => {
            m.insert("status".into(), "completed".into());
        }
        RunStatus::BlowUpDetected { t_blow } => {
            m.insert("status".into(), "blow_up_detected".into());
            m.insert("t_blow".into(), json_number(t_blow));
        }
    }
    m.insert("max_l1_cap_lr".into(), json_number(run.max_l1_cap_lr()));
    m
}

/// Resolve `particles.cutoff_a`; `auto` needs a completed reference run.
fn resolve_cutoff(cfg: &ExperimentConfig, run: Option<&PdeRun>) -> Result<Option<Cutoff>, Failure> {
    let kernel = cfg.kernel_spec();
    match cfg.cutoff_a {
        CutoffSetting::None => Ok(None),
        CutoffSetting::Fixed(a) => Ok(Some(Cutoff::new(a).map_err(|e| Failure::Validation(e.to_string()))?)),
        CutoffSetting::Auto if kernel.is_zero() => Ok(None),
        CutoffSetting::Auto => {
            let run = run.expect("reference run for automatic cutoff");
            let c = kernel.drift_bound_constant(cfg.r, &TanhSinh::default()).map_err(runtime)?.constant;
            let a = compute_cutoff_a(run, c).map_err(runtime)?;
            Ok(Some(Cutoff::new(a).map_err(runtime)?))
        }
    }
}

fn pde(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let run = reference_run(cfg)?;
    write(out_path(cfg, "norm_trace.csv"), &io::norm_trace_csv(&run.norm_trace))?;
    for (k, (t, u)) in run.snapshots.iter().enumerate() {
        io::write_grid(&out_path(cfg, &format!("u_{k:04}.grid")), u, *t, cfg.kernel).map_err(runtime)?;
    }
    let summary = io::summary_json(status_fields(&run), &cfg.to_config_string());
    write(out_path(cfg, "pde.json"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn simulate_cmd(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let needs_ref = cfg.cutoff_a == CutoffSetting::Auto && !cfg.kernel_spec().is_zero();
    let run = if needs_ref { Some(reference_run(cfg)?) } else { None };
    let cutoff = resolve_cutoff(cfg, run.as_ref())?;
    let setup = cfg.setup(cutoff);
    let n = cfg.n[0];
    let engine = setup.engine(n).map_err(runtime)?;
    let sim = SimConfig {
        n,
        dt: cfg.dt,
        t_end: cfg.t_end,
        snapshot_times: cfg.snapshots.clone(),
        seed: cfg.seed,
        noise: true,
    };
    let traj = simulate(&setup.init, &engine, &sim).map_err(runtime)?;
    let mollifier = setup.mollifier(n).map_err(runtime)?;
    for (k, (t, pos)) in traj.snapshots.iter().enumerate() {
        write(out_path(cfg, &format!("particles_{k:04}.csv")), &io::particles_csv(cfg.d, pos))?;
        let pts = WeightedPointSet::uniform(cfg.d, pos.clone()).map_err(runtime)?;
        let dep = deposit_un(&pts, &mollifier, setup.grid).map_err(runtime)?;
        io::write_grid(&out_path(cfg, &format!("un_{k:04}.grid")), &dep.field, *t, cfg.kernel).map_err(runtime)?;
    }
    let mut m = Map::new();
    m.insert("n".into(), n.into());
    m.insert("cutoff_a".into(), cutoff.map_or(Value::Null, |c| json_number(c.level())));
    m.insert("saturation_fraction".into(), json_number(traj.saturation_fraction));
    let summary = io::summary_json(m, &cfg.to_config_string());
    write(out_path(cfg, "simulate.json"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn rate(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let run = reference_run(cfg)?;
    if let RunStatus::BlowUpDetected { t_blow } = run.status {
        let mut m = status_fields(&run);
        m.insert("note".into(), format!("reference solution blew up at t = {t_blow}; no sweep run").into());
        let summary = io::summary_json(m, &cfg.to_config_string());
        write(out_path(cfg, "rate.json"), &summary)?;
        print!("{summary}");
        return Ok(());
    }
    let cutoff = resolve_cutoff(cfg, Some(&run))?;
    let setup = cfg.setup(cutoff);
    let report = rate_sweep(&setup, &run, &cfg.n, cfg.reps, cfg.norm, &cfg.kr_options(), cfg.seed).map_err(runtime)?;
    write(out_path(cfg, "rate.csv"), &io::rate_csv(&report))?;
    let summary = io::rate_summary_json(&report, &cfg.to_config_string());
    write(out_path(cfg, "rate.json"), &summary)?;
    print!("{}", io::rate_csv(&report));
    print!("{summary}");
    Ok(())
}

fn chaos(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let run = reference_run(cfg)?;
    if let RunStatus::BlowUpDetected { .. } = run.status {
        let summary = io::summary_json(status_fields(&run), &cfg.to_config_string());
        write(out_path(cfg, "chaos.json"), &summary)?;
        print!("{summary}");
        return Ok(());
    }
    let cutoff = resolve_cutoff(cfg, Some(&run))?;
    let setup = cfg.setup(cutoff);
    let rows = chaos_coupling(&setup, &run, &cfg.n, cfg.reps, cfg.seed).map_err(runtime)?;
    write(out_path(cfg, "chaos.csv"), &io::chaos_csv(&rows))?;
    let mut medians = Map::new();
    for &n in &cfg.n {
        let mut g: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.gap).collect();
        g.sort_by(f64::total_cmp);
        let med = if g.is_empty() {
            f64::NAN
        } else if g.len() % 2 == 1 {
            g[g.len() / 2]
        } else {
            0.5 * (g[g.len() / 2 - 1] + g[g.len() / 2])
        };
        medians.insert(n.to_string(), json_number(med));
    }
    let mut m = Map::new();
    m.insert("median_gap".into(), Value::Object(medians));
    m.insert("cutoff_a".into(), cutoff.map_or(Value::Null, |c| json_number(c.level())));
    let summary = io::summary_json(m, &cfg.to_config_string());
    write(out_path(cfg, "chaos.json"), &summary)?;
    print!("{summary}");
    Ok(())
}

enum Loaded {
    Points(WeightedPointSet),
    Grid(GridField),
}

fn load_measure(path: &Path) -> Result<Loaded, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    if bytes.starts_with(io::GRID_MAGIC) {
        let (_, field) = io::decode_grid(&bytes, path).map_err(|e| Failure::Validation(e.to_string()))?;
        return Ok(Loaded::Grid(field));
    }
    let (d, pos) = io::read_particles_csv(path).map_err(|e| Failure::Validation(e.to_string()))?;
    let pts = WeightedPointSet::uniform(d, pos).map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(Loaded::Points(pts))
}

fn distance(a: &Path, b: &Path, resolution: usize) -> Result<(), Failure> {
    let la = load_measure(a)?;
    let lb = load_measure(b)?;
    fn view(l: &Loaded) -> Measure<'_> {
        match l {
            Loaded::Points(p) => Measure::Points(p),
            Loaded::Grid(g) => Measure::Grid(g),
        }
    }
    let opts = KrOptions { resolution, ..KrOptions::default() };
    let v = kr_distance(view(&la), view(&lb), &opts).map_err(|e| match e {
        ipslab::kr::KrError::NoConvergence(_) => runtime(e),
        other => Failure::Validation(other.to_string()),
    })?;
    println!("{v:.16e}");
    Ok(())
}

fn parse_real(s: &str) -> Result<f64, String> {
    if let Some(q) = parse_ratio(s) {
        return Ok(*q.numer() as f64 / *q.denom() as f64);
    }
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        t => t.parse().map_err(|_| format!("`{s}` is not a number")),
    }
}

/// Exact value of `p/q` or a terminating decimal.
fn parse_ratio(s: &str) -> Option<Ratio<i64>> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let q: i64 = q.trim().parse().ok()?;
        let p: i64 = p.trim().parse().ok()?;
        return (q != 0).then(|| Ratio::new(p, q));
    }
    let (neg, body) = s.strip_prefix('-').map_or((false, s), |r| (true, r));
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() || frac.len() > 15 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits: i64 = format!("{int}{frac}").parse().ok()?;
    let q = Ratio::new(digits, 10i64.pow(frac.len() as u32));
    Some(if neg { -q } else { q })
}

fn exponent<T: Scalar>(s: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Exponent<T>, Failure> {
    if s.trim() == "inf" {
        Ok(Exponent::Infinite)
    } else {
        parse(s).map(Exponent::Finite).ok_or_else(|| Failure::Validation(format!("`{s}` is not a number")))
    }
}

fn show_ratio(q: &Ratio<i64>) -> String {
    format!("{q} ({:.16e})", *q.numer() as f64 / *q.denom() as f64)
}

fn calc(args: &CalcArgs) -> Result<(), Failure> {
    let all: Vec<&String> =
        [Some(&args.zeta), Some(&args.r), args.alpha.as_ref(), args.beta.as_ref(), args.r_tilde.as_ref(), args.delta.as_ref()]
            .into_iter()
            .flatten()
            .collect();
    let exact = all.iter().all(|s| s.trim() == "inf" || parse_ratio(s).is_some());
    if exact {
        calc_with(args, parse_ratio, show_ratio)
    } else {
        calc_with(args, |s| parse_real(s).ok(), |x: &f64| format!("{x:.16e}"))
    }
}

fn calc_with<T: Scalar>(
    args: &CalcArgs,
    parse: impl Fn(&str) -> Option<T> + Copy,
    show: impl Fn(&T) -> String,
) -> Result<(), Failure> {
    let num = |name: &str, s: &str| parse(s).ok_or_else(|| Failure::Validation(format!("--{name}: `{s}` is not a number")));
    let zeta = num("zeta", &args.zeta)?;
    let d = args.d;
    if d == 0 {
        return Err(Failure::Validation("--d must be positive".into()));
    }
    let mut printed = false;
    if args.singular {
        let beta = args.beta.as_deref().map(|b| num("beta", b)).transpose()?;
        let r_tilde = args.r_tilde.as_deref().map(|r| exponent(r, parse)).transpose()?;
        if let Some(a) = &args.alpha {
            let (Some(beta), Some(rt)) = (beta.clone(), r_tilde.as_ref()) else {
                return Err(Failure::Validation("--singular with --alpha needs --beta and --r-tilde".into()));
            };
            let (rho, ok) = theoretical_rate_singular(d, num("alpha", a)?, zeta.clone(), beta, rt);
            println!("rho~ = {}", show(&rho));
            println!("admissible = {ok}");
            printed = true;
        }
        if args.best_alpha {
            let window = match (beta.clone(), r_tilde.as_ref()) {
                (Some(b), Some(r)) => Some((b, r)),
                _ => None,
            };
            let (a, rho) = best_alpha_singular(d, zeta.clone(), window).map_err(|e| Failure::Validation(e.to_string()))?;
            println!("alpha* = {}", show(&a));
            println!("rho~* = {}", show(&rho));
            printed = true;
        }
        if let Some(delta) = &args.delta {
            let (Some(beta), Some(Exponent::Finite(rt))) = (beta, r_tilde) else {
                return Err(Failure::Validation("--delta needs --beta and a finite --r-tilde".into()));
            };
            let s = sobolev_rate_exponent(d, beta, rt, num("delta", delta)?)
                .map_err(|e| Failure::Validation(e.to_string()))?;
            println!("gamma = {}", show(&s.gamma));
            println!("gamma/beta = {}", show(&s.factor));
            println!("holder_embedding = {}", s.embeds);
            printed = true;
        }
    } else {
        let r = exponent(&args.r, parse)?;
        if let Some(a) = &args.alpha {
            let (rho, ok) = theoretical_rate(d, num("alpha", a)?, zeta.clone(), &r);
            println!("rho = {}", show(&rho));
            println!("admissible = {ok}");
            printed = true;
        }
        if args.best_alpha {
            let (a, rho) = best_alpha(d, zeta, &r).map_err(|e| Failure::Validation(e.to_string()))?;
            println!("alpha* = {}", show(&a));
            println!("rho* = {}", show(&rho));
            printed = true;
        }
    }
    if !printed {
        return Err(Failure::Validation("nothing to compute: pass --alpha, --best-alpha or --delta".into()));
    }
    Ok(())
}
