//! End-to-end acceptance suite. Each criterion prints one PASS or FAIL line;
//! the test fails if any criterion does.
//!
//! The Monte-Carlo criteria run the `ipslab` binary, so they exercise the
//! configuration parser and result writers as well.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{lp_oracle, random_measure, TestRng};
use ipslab::cutoff::Cutoff;
use ipslab::grid::{GridField, GridSpec};
use ipslab::kernel::{KernelFamily, KernelSpec};
use ipslab::kr::{kr_distance, KrOptions, Measure};
use ipslab::measures::WeightedPointSet;
use ipslab::mollifier::{ForceTable, MollifierSpec};
use ipslab::particles::drift_direct;
use ipslab::pde::{gaussian_density, PdeConfig, PdeSolver, RunStatus, Scheme};
use ipslab::rates::{best_alpha, theoretical_rate, Exponent};
use num_rational::Ratio;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gaussian(spec: GridSpec, var: f64) -> GridField {
    let zero = vec![0.0; spec.d];
    GridField::from_fn(spec, |x| gaussian_density(x, &zero, var))
}

fn sup_rel(a: &GridField, b: &GridField) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / b.max_abs()
}

fn solver(fam: KernelFamily, spec: GridSpec) -> PdeSolver {
    PdeSolver::new(spec, &KernelSpec::new(fam, spec.d).unwrap()).unwrap()
}

fn heat_semigroup() -> Outcome {
    let mut worst = 0.0f64;
    for d in 1..=2 {
        let spec = GridSpec::new(d, 256, 4.0).unwrap();
        let out = solver(KernelFamily::Zero, spec).heat_propagate(&gaussian(spec, 0.1), 0.05);
        worst = worst.max(sup_rel(&out, &gaussian(spec, 0.2)));
    }
    check(worst < 1e-6, format!("sup rel err {worst:.2e}"))
}

fn mass_conservation() -> Outcome {
    let spec = GridSpec::new(2, 64, 4.0).unwrap();
    let mut step_worst = 0.0f64;
    for fam in [
        KernelFamily::Zero,
        KernelFamily::BiotSavart,
        KernelFamily::KellerSegel { chi: 4.0 * PI },
        KernelFamily::Riesz { s: 0.5, attractive: false },
    ] {
        let s = solver(fam, spec);
        let mut u = GridField::from_fn(spec, |x| {
            0.7 * gaussian_density(x, &[0.4, 0.1], 0.15) + 0.3 * gaussian_density(x, &[-0.5, -0.4], 0.3)
        });
        for scheme in [Scheme::Euler, Scheme::Heun] {
            for _ in 0..10 {
                let next = s.pde_step(&u, 0.005, scheme, None);
                step_worst = step_worst.max((next.integral() - u.integral()).abs());
                u = next;
            }
        }
    }
    let spec = GridSpec::new(2, 128, 4.0).unwrap();
    let run = solver(KernelFamily::KellerSegel { chi: 4.0 * PI }, spec)
        .solve(&gaussian(spec, 0.25), &PdeConfig::new(1e-3, 1.0, 2.0))
        .unwrap();
    let m0 = run.norm_trace[0].mass;
    let drift = run.norm_trace.iter().map(|p| (p.mass - m0).abs()).fold(0.0, f64::max);
    let done = run.status == RunStatus::Completed;
    check(
        step_worst < 1e-12 && drift < 1e-10 && done,
        format!("per-step {step_worst:.2e}, chi = 4pi run drift {drift:.2e}, completed {done}"),
    )
}

fn lamb_oseen() -> Outcome {
    let spec = GridSpec::new(2, 256, 32.0).unwrap();
    let s = solver(KernelFamily::BiotSavart, spec);
    let u0 = gaussian(spec, 1.0);
    let l2 = |f: &GridField| (f.values.iter().map(|v| v * v).sum::<f64>() * spec.cell_volume()).sqrt();
    let div = l2(&s.flux_divergence(&u0, None)) / l2(&u0);
    let run = s.solve(&u0, &PdeConfig::new(0.01, 0.5, 2.0)).unwrap();
    let err = sup_rel(&run.snapshots.last().unwrap().1, &s.heat_propagate(&u0, 0.5));
    check(div < 1e-6 && err < 1e-4, format!("flux divergence {div:.2e}, heat mismatch {err:.2e}"))
}

fn keller_segel_dichotomy() -> Outcome {
    let spec = GridSpec::new(2, 128, 4.0).unwrap();
    let sub = solver(KernelFamily::KellerSegel { chi: 4.0 * PI }, spec)
        .solve(&gaussian(spec, 0.25), &PdeConfig::new(1e-3, 1.0, 2.0))
        .unwrap();
    let lr_max = sub.norm_trace.iter().map(|p| p.lr).fold(0.0, f64::max);
    let sup = solver(KernelFamily::KellerSegel { chi: 16.0 * PI }, spec)
        .solve(&gaussian(spec, 0.05), &PdeConfig::new(1e-3, 1.0, 2.0))
        .unwrap();
    let blow = match sup.status {
        RunStatus::BlowUpDetected { t_blow } if t_blow < 1.0 => Some(t_blow),
        _ => None,
    };
    check(
        sub.status == RunStatus::Completed && lr_max.is_finite() && lr_max < 1e3 && blow.is_some(),
        format!("chi = 4pi max L^2 {lr_max:.3}; chi = 16pi blow-up at {blow:?}"),
    )
}

fn cutoff_suite() -> Outcome {
    let mut fails = Vec::new();
    for a in [0.5, 1.0, 3.64] {
        let c = Cutoff::new(a).unwrap();
        let n = 100_000;
        let lo = -(a + 2.0);
        let h = 2.0 * (a + 2.0) / n as f64;
        let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| c.eval(x)).collect();
        for (&x, &y) in xs.iter().zip(&ys) {
            if x.abs() <= a && y != x {
                fails.push(format!("A={a}: f({x}) = {y} is not the identity"));
            }
            if x.abs() >= a + 1.0 && y != a.copysign(x) {
                fails.push(format!("A={a}: f({x}) = {y} does not saturate"));
            }
            if y.abs() > a + 1.0 || c.eval(-x) != -y {
                fails.push(format!("A={a}: bound or oddness fails at {x}"));
            }
        }
        let slope = ys.windows(2).map(|w| (w[1] - w[0]).abs() / h).fold(0.0, f64::max);
        if slope > 1.0 + 1e-9 {
            fails.push(format!("A={a}: difference quotient {slope}"));
        }
    }
    fails.truncate(3);
    check(fails.is_empty(), if fails.is_empty() { "3 levels, 1e5 samples each".into() } else { fails.join("; ") })
}

fn force_tables() -> Outcome {
    let m = MollifierSpec::new(2, 1.0, 0.25, 1000).unwrap();
    let mut rng = TestRng::new(31);
    let mut notes = Vec::new();
    let mut ok = true;
    for fam in [
        KernelFamily::Riesz { s: 0.0, attractive: false },
        KernelFamily::Riesz { s: 0.5, attractive: false },
        KernelFamily::BiotSavart,
        KernelFamily::KellerSegel { chi: 1.0 },
    ] {
        let k = KernelSpec::new(fam, 2).unwrap();
        let tol = 1e-6;
        let t = ForceTable::build(&k, &m, 2048, tol).unwrap();
        let origin = t.interaction_force(&[0.0, 0.0]);
        // the profile is continuous at 0 as well as vanishing there
        let zero = origin.iter().all(|v| v.abs() < 1e-8) && t.exact_radial(1e-12).unwrap().abs() < 1e-8;
        let mut odd = true;
        for _ in 0..1000 {
            let x = [rng.range(-3.0, 3.0), rng.range(-3.0, 3.0)];
            let a = t.interaction_force(&x);
            let b = t.interaction_force(&[-x[0], -x[1]]);
            odd &= a[0] == -b[0] && a[1] == -b[1];
        }
        let sw = t.far_field_switch_radius();
        let raw = k.radial_profile(sw);
        let far = ((t.exact_radial(sw).unwrap() - raw) / raw).abs();
        ok &= zero && odd && far <= tol;
        notes.push(format!("{}: far {far:.1e}", fam.name()));
        if !(zero && odd) {
            notes.push(format!("{}: origin {zero}, odd {odd}", fam.name()));
        }
    }
    check(ok, notes.join(", "))
}

/// Force tables for every family. Antisymmetry holds at any table accuracy,
/// so coarse tables suffice; they are built outside the timed check.
fn pair_tables() -> Vec<ForceTable> {
    let m = MollifierSpec::new(2, 1.0, 0.25, 2).unwrap();
    [
        KernelFamily::Zero,
        KernelFamily::Riesz { s: 0.5, attractive: true },
        KernelFamily::Coulomb,
        KernelFamily::BiotSavart,
        KernelFamily::KellerSegel { chi: 8.0 * PI },
        KernelFamily::AttractiveRepulsive { a: 0.5, b: 0.25, va: 1.0, vb: 1.0 },
    ]
    .into_iter()
    .map(|fam| ForceTable::build(&KernelSpec::new(fam, 2).unwrap(), &m, 32, 1e-4).unwrap())
    .collect()
}

fn pair_antisymmetry(tables: &[ForceTable]) -> Outcome {
    let mut rng = TestRng::new(77);
    let mut worst = 0.0f64;
    let cut = Cutoff::new(2.0).unwrap();
    for t in tables {
        for _ in 0..1000 {
            let pos: Vec<f64> = (0..4).map(|_| rng.range(-2.0, 2.0)).collect();
            for c in [None, Some(&cut)] {
                let v = drift_direct(2, &pos, t, c).values;
                let scale = v.iter().fold(f64::MIN_POSITIVE, |a, x| a.max(x.abs()));
                worst = worst.max((v[0] + v[2]).abs().max((v[1] + v[3]).abs()) / scale);
            }
        }
    }
    check(worst <= f64::EPSILON, format!("worst relative center-of-mass drift {worst:.1e}"))
}

fn rate_formulas() -> Outcome {
    type Q = Ratio<i64>;
    let (rho, ok) = theoretical_rate(2, Q::new(1, 6), Q::from_integer(1), &Exponent::Infinite);
    let mut good = rho == Q::new(1, 6) && ok;
    let mut found = vec![format!("rho(1/6) = {rho}")];
    for d in 1..=3usize {
        let (a, r) = best_alpha(d, Q::from_integer(1), &Exponent::Infinite).unwrap();
        good &= a == Q::new(1, 2 * (d as i64 + 1)) && r == a;
        found.push(format!("d={d}: alpha* = {a}"));
    }
    check(good, found.join(", "))
}

fn kr_oracle() -> Outcome {
    let mut rng = TestRng::new(909);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d = 1 + case % 2;
        let (pa, wa) = random_measure(&mut rng, d, 3);
        let (pb, wb) = random_measure(&mut rng, d, 3);
        let want = lp_oracle(d, &pa, &wa, &pb, &wb);
        let a = WeightedPointSet::new(d, pa, wa).unwrap();
        let b = WeightedPointSet::new(d, pb, wb).unwrap();
        let got = kr_distance(Measure::Points(&a), Measure::Points(&b), &KrOptions::default()).unwrap();
        worst = worst.max((got - want).abs());
    }
    let mut dirac = 0.0f64;
    for _ in 0..20 {
        let x = [rng.range(-3.0, 3.0), rng.range(-3.0, 3.0)];
        let y = [rng.range(-3.0, 3.0), rng.range(-3.0, 3.0)];
        let a = WeightedPointSet::uniform(2, x.to_vec()).unwrap();
        let b = WeightedPointSet::uniform(2, y.to_vec()).unwrap();
        let got = kr_distance(Measure::Points(&a), Measure::Points(&b), &KrOptions::default()).unwrap();
        dirac = dirac.max((got - (x[0] - y[0]).hypot(x[1] - y[1]).min(2.0)).abs());
    }
    check(worst < 1e-6 && dirac < 1e-12, format!("LP oracle err {worst:.1e}, two-Dirac err {dirac:.1e}"))
}

// ---- Monte-Carlo criteria through the binary ----

const HEAT: &str = "\
kernel.family = zero
grid.d = 1
grid.g = 1024
grid.l = 8
mollifier.alpha = 0.25
init.vars = 0.25
particles.n = 256, 512, 1024, 2048, 4096
particles.dt = 0.01
particles.t_end = 0.5
pde.dt = 0.01
pde.snapshots = 0, 0.1, 0.2, 0.3, 0.4, 0.5
experiment.reps = 20
experiment.norm = l1
";

const VORTEX: &str = "\
kernel.family = biot-savart
grid.d = 2
grid.g = 128
grid.l = 4
mollifier.alpha = 0.16666666666666666
init.weights = 0.5, 0.5
init.means = 0.6 0; -0.6 0
init.vars = 0.1, 0.1
particles.dt = 0.01
particles.t_end = 0.5
particles.cutoff_a = auto
particles.drift_path = grid
pde.dt = 0.001
pde.r = 4
";

fn snapshots(step: f64, t_end: f64) -> String {
    let k = (t_end / step).round() as usize;
    let times: Vec<String> = (0..=k).map(|i| format!("{}", i as f64 * step)).collect();
    format!("pde.snapshots = {}\n", times.join(", "))
}

fn vortex_rate(norm: &str) -> String {
    format!(
        "{VORTEX}{}particles.n = 256, 1024, 4096\nexperiment.reps = 10\nexperiment.norm = {norm}\n",
        snapshots(0.1, 0.5)
    )
}

fn vortex_chaos() -> String {
    format!("{VORTEX}{}particles.n = 128, 512, 2048\nexperiment.reps = 20\n", snapshots(0.01, 0.5))
}

fn zero_chaos() -> String {
    format!(
        "kernel.family = zero\ngrid.d = 2\ngrid.g = 64\ngrid.l = 4\nparticles.n = 64, 256\nparticles.t_end = 0.2\n\
         experiment.reps = 5\n{}",
        snapshots(0.05, 0.2)
    )
}

/// The Monte-Carlo runs: (name, subcommand, config).
fn mc_runs() -> Vec<(&'static str, &'static str, String)> {
    vec![
        ("heat", "rate", HEAT.to_string()),
        ("vortex_l1", "rate", vortex_rate("l1")),
        ("vortex_kr", "rate", vortex_rate("kr")),
        ("zero_chaos", "chaos", zero_chaos()),
        ("vortex_chaos", "chaos", vortex_chaos()),
    ]
}

fn run_cli(workdir: &Path, name: &str, task: &str, config: &str, threads: usize) -> Result<Duration, String> {
    let dir = workdir.join(name);
    fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    fs::write(dir.join("run.cfg"), config).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_ipslab"))
        .current_dir(&dir)
        .args([task, "--config", "run.cfg", "--out", "out", "--seed", "20240601", "--threads"])
        .arg(threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{name}: exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(start.elapsed())
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, f64>> {
    let text = fs::read_to_string(path).unwrap_or_default();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    lines
        .map(|l| header.iter().zip(l.split(',')).map(|(h, v)| (h.to_string(), v.parse().unwrap_or(f64::NAN))).collect())
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    fs::read_to_string(path).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
}

fn rate_result(workdir: &Path, name: &str) -> (Vec<f64>, f64) {
    let out = workdir.join(name).join("out");
    let means = read_csv(&out.join("rate.csv")).iter().map(|r| r["mean_err"]).collect();
    let slope = json(&out.join("rate.json"))["slope"].as_f64().unwrap_or(f64::NAN);
    (means, slope)
}

fn strictly_decreasing(v: &[f64]) -> bool {
    !v.is_empty() && v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(" ")
}

fn heat_rate(w: &Path) -> Outcome {
    let (m, slope) = rate_result(w, "heat");
    check(
        m.len() == 5 && strictly_decreasing(&m) && slope >= 0.15,
        format!("mean L1 errors [{}], slope {slope:.3}", fmt_list(&m)),
    )
}

fn vortex_rates(w: &Path) -> Outcome {
    let (l1, s1) = rate_result(w, "vortex_l1");
    let (kr, s2) = rate_result(w, "vortex_kr");
    check(
        l1.len() == 3 && strictly_decreasing(&l1) && s1 > 0.0 && kr.len() == 3 && s2 > 0.0,
        format!("L1 [{}] slope {s1:.3}; KR [{}] slope {s2:.3}", fmt_list(&l1), fmt_list(&kr)),
    )
}

fn medians(rows: &[BTreeMap<String, f64>]) -> Vec<f64> {
    let mut by_n: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in rows {
        by_n.entry(r["n"] as u64).or_default().push(r["gap"]);
    }
    by_n.into_values()
        .map(|mut g| {
            g.sort_by(f64::total_cmp);
            let k = g.len();
            if k % 2 == 1 {
                g[k / 2]
            } else {
                0.5 * (g[k / 2 - 1] + g[k / 2])
            }
        })
        .collect()
}

fn coupling(w: &Path) -> Outcome {
    let zero = read_csv(&w.join("zero_chaos/out/chaos.csv"));
    let zero_ok = !zero.is_empty() && zero.iter().all(|r| r["gap"] == 0.0);
    let med = medians(&read_csv(&w.join("vortex_chaos/out/chaos.csv")));
    check(
        zero_ok && med.len() == 3 && strictly_decreasing(&med),
        format!("zero-kernel gaps all zero: {zero_ok}; Biot-Savart medians [{}]", fmt_list(&med)),
    )
}

fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap_or_default());
            }
        }
    }
    out
}

fn reproducibility(one: &Path, eight: &Path) -> Outcome {
    let a = tree_bytes(one);
    let b = tree_bytes(eight);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    check(
        !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        format!("{} files compared, {} differ {:?}", a.len(), differing.len(), differing.iter().take(3).collect::<Vec<_>>()),
    )
}

#[test]
fn acceptance() {
    let mut results: Vec<(usize, &str, Outcome, Duration, Duration)> = Vec::new();
    let mut record = |id: usize, name: &'static str, budget: Duration, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let r = f();
        results.push((id, name, r, start.elapsed(), budget));
    };
    let s = Duration::from_secs;
    record(1, "heat semigroup exactness", s(1), &heat_semigroup);
    record(2, "mass conservation", s(30), &mass_conservation);
    record(3, "Lamb-Oseen radiality", s(30), &lamb_oseen);
    record(4, "Keller-Segel dichotomy", s(120), &keller_segel_dichotomy);
    record(5, "cutoff function suite", s(1), &cutoff_suite);
    record(6, "force-table invariants", s(60), &force_tables);
    let tables = pair_tables();
    record(7, "two-particle antisymmetry", s(1), &|| pair_antisymmetry(&tables));
    record(8, "rate formulas", s(1), &rate_formulas);
    record(9, "KR oracle equivalence", s(60), &kr_oracle);

    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    let mut mc_time: BTreeMap<&str, Duration> = BTreeMap::new();
    let mut mc_err = Vec::new();
    for (name, task, cfg) in mc_runs() {
        match run_cli(one.path(), name, task, &cfg, 1) {
            Ok(t) => {
                mc_time.insert(name, t);
            }
            Err(e) => mc_err.push(e),
        }
    }
    let took = |names: &[&str]| names.iter().filter_map(|n| mc_time.get(n)).sum::<Duration>();
    let guard = |o: Outcome| if mc_err.is_empty() { o } else { Err(mc_err.join("; ")) };
    results.push((10, "pure-heat particle convergence", guard(heat_rate(one.path())), took(&["heat"]), s(600)));
    results.push((
        11,
        "singular-drift convergence trend",
        guard(vortex_rates(one.path())),
        took(&["vortex_l1", "vortex_kr"]),
        s(1800),
    ));
    results.push((
        12,
        "coupling gap",
        guard(coupling(one.path())),
        took(&["zero_chaos", "vortex_chaos"]),
        s(1200),
    ));

    let start = Instant::now();
    let rerun: Result<(), String> =
        mc_runs().into_iter().try_for_each(|(name, task, cfg)| run_cli(eight.path(), name, task, &cfg, 8).map(|_| ()));
    let repro = rerun.and_then(|_| reproducibility(one.path(), eight.path()));
    let mc_total = took(&["heat", "vortex_l1", "vortex_kr", "zero_chaos", "vortex_chaos"]);
    results.push((13, "bit-reproducibility at 1 and 8 threads", repro, start.elapsed(), mc_total + s(60)));

    let mut failed = 0;
    for (id, name, r, t, budget) in &results {
        let in_time = t <= budget;
        let (tag, detail) = match r {
            Ok(d) if in_time => ("PASS", d.clone()),
            Ok(d) => ("FAIL", format!("{d}; over the {budget:?} budget")),
            Err(d) => ("FAIL", d.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        // written to the handle directly so the lines survive output capture
        let _ = writeln!(
            std::io::stdout().lock(),
            "criterion {id:>2} {tag}: {name} ({:.1} s) {detail}",
            t.as_secs_f64()
        );
    }
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
