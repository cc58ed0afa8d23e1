use ipslab::experiments::{chaos_coupling, rate_sweep, ErrorNorm, Setup};
use ipslab::grid::GridSpec;
use ipslab::kernel::{KernelFamily, KernelSpec};
use ipslab::kr::KrOptions;
use ipslab::particles::{DriftPath, InitialLaw, TableSettings};
use ipslab::pde::{PdeConfig, PdeRun, PdeSolver};

fn setup(fam: KernelFamily) -> (Setup, PdeRun) {
    let kernel = KernelSpec::new(fam, 2).unwrap();
    let grid = GridSpec::new(2, 64, 4.0).unwrap();
    let init = InitialLaw::gaussian(2, vec![0.0, 0.0], 0.2).unwrap();
    let mut cfg = PdeConfig::new(0.005, 0.1, 2.0);
    cfg.snapshot_times = vec![0.0, 0.05, 0.1];
    let run = PdeSolver::new(grid, &kernel).unwrap().solve(&init.on_grid(grid), &cfg).unwrap();
    let s = Setup {
        kernel,
        init,
        grid,
        radius: 1.0,
        alpha: 0.2,
        table: TableSettings { resolution: 256, tol: 1e-5 },
        dt: 0.01,
        t_end: 0.1,
        drift_path: DriftPath::Direct,
        cutoff: None,
        r: 2.0,
    };
    (s, run)
}

#[test]
fn rate_sweep_is_deterministic() {
    let (s, run) = setup(KernelFamily::BiotSavart);
    let opts = KrOptions::default();
    let sweep = |seed| rate_sweep(&s, &run, &[32, 64, 128], 3, ErrorNorm::L1Lr, &opts, seed).unwrap();
    let a = sweep(5);
    let b = sweep(5);
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert_eq!(a.rows.len(), 3);
    assert!(a.slope_ci.is_finite());
    assert_ne!(format!("{a:?}"), format!("{:?}", sweep(6)));
    let kr = rate_sweep(&s, &run, &[32, 64], 2, ErrorNorm::Kr, &opts, 5).unwrap();
    assert!(kr.rows.iter().all(|r| r.mean_err > 0.0 && r.mean_err <= 2.0));
}

#[test]
fn coupling_is_deterministic_and_trivial_without_interaction() {
    let (s, run) = setup(KernelFamily::Zero);
    let rows = chaos_coupling(&s, &run, &[16, 64], 3, 1).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.gap == 0.0));

    let (s, run) = setup(KernelFamily::BiotSavart);
    let a = chaos_coupling(&s, &run, &[16, 64], 2, 9).unwrap();
    assert_eq!(a, chaos_coupling(&s, &run, &[16, 64], 2, 9).unwrap());
    assert!(a.iter().all(|r| r.gap > 0.0 && r.gap.is_finite()));
}
