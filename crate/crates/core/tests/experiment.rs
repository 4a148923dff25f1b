use std::fs;

use mslod::assembly::assemble;
use mslod::coeff::make_heterogeneous;
use mslod::experiment::{
    basis_cache, cache_path, compute_single, make_field, run_single, run_sweep, CacheStatus, ExperimentConfig, ExperimentError, SweepParam,
    SweepSpec, TargetSpec,
};
use mslod::grid::build_hierarchy;
use mslod::lod::{fingerprint, load_basis, load_basis_checked, save_basis, LodError};

fn small_oscillatory(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::oscillatory_example(32);
    cfg.n_coarse = Some(4);
    cfg.output_dir = dir.join("out");
    cfg
}

#[test]
fn config_file_round_trip_and_key_errors() {
    let text = "\
# comment
mesh.nh = 64
mesh.nH = 8   # coarse
mesh.nrho = 16
coeff.kind = heterogeneous
coeff.seed = 7
coeff.blocks = 16
ocp.phi1 = -1, 0.5, 0
ocp.phi2 = 1,0,0
ocp.y_d = 0.25
sweep.param = rho
sweep.values = 8,16
";
    let cfg = ExperimentConfig::parse(text).unwrap();
    assert_eq!(cfg.nh, 64);
    assert_eq!(cfg.n_coarse, Some(8));
    assert_eq!(cfg.control_resolution(), 16);
    assert_eq!(cfg.coeff.seed, 7);
    assert_eq!(cfg.phi1.c1, 0.5);
    assert_eq!(cfg.y_d, TargetSpec::Constant(0.25));
    assert_eq!(
        cfg.sweep,
        Some(SweepSpec {
            param: SweepParam::Rho,
            values: vec![8, 16]
        })
    );
    cfg.validate().unwrap();

    let err = ExperimentConfig::parse("mesh.nh = abc").unwrap_err();
    assert_eq!(err.key, "mesh.nh");
    let err = ExperimentConfig::parse("mesh.bogus = 1").unwrap_err();
    assert_eq!(err.key, "mesh.bogus");
    let err = ExperimentConfig::parse("ocp.phi1 = 1,2").unwrap_err();
    assert_eq!(err.key, "ocp.phi1");

    let mut bad = cfg.clone();
    bad.n_coarse = Some(7);
    assert_eq!(bad.validate().unwrap_err().key, "mesh.nH");
    let mut bad = cfg.clone();
    bad.phi1 = mslod::assembly::Affine::constant(2.0);
    assert_eq!(bad.validate().unwrap_err().key, "ocp.phi1");
    let mut bad = cfg;
    bad.coeff.blocks = 40;
    assert_eq!(bad.validate().unwrap_err().key, "coeff.blocks");
}

#[test]
fn config_errors_map_to_exit_code_two() {
    let mut cfg = ExperimentConfig::default();
    cfg.gamma = -1.0;
    let err = compute_single(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("ocp.gamma"));
}

#[test]
fn zero_target_run_has_zero_cost() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_oscillatory(dir.path());
    cfg.y_d = TargetSpec::Constant(0.0);
    cfg.phi1 = mslod::assembly::Affine::constant(-1.0);
    cfg.phi2 = mslod::assembly::Affine::constant(1.0);
    let rec = run_single(&cfg).unwrap();
    assert_eq!(rec.j_tilde, 0.0);
    assert!(rec.solution.u.iter().all(|&u| u == 0.0));
    let lo = fs::read_to_string(cfg.output_dir.join("active_lo.csv")).unwrap();
    assert_eq!(lo, "0,0,0,0\n".repeat(4));
}

#[test]
fn result_csv_is_bit_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_oscillatory(dir.path());
    cfg.compare_fine = true;
    run_single(&cfg).unwrap();
    let first = fs::read(cfg.output_dir.join("result.csv")).unwrap();
    cfg.output_dir = dir.path().join("again");
    run_single(&cfg).unwrap();
    let second = fs::read(cfg.output_dir.join("result.csv")).unwrap();
    assert_eq!(first, second);
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("quantity,value\n"));
    assert!(text.contains("\nrel_l2_u,"));
}

#[test]
fn active_set_grid_rows_start_at_the_bottom() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_oscillatory(dir.path());
    cfg.n_coarse = None;
    cfg.n_control = Some(8);
    let rec = run_single(&cfg).unwrap();
    let text = fs::read_to_string(cfg.output_dir.join("active_lo.csv")).unwrap();
    let rows: Vec<Vec<u8>> = text
        .lines()
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);
    for c in 0..64 {
        let expected = u8::from(rec.solution.active_lo.contains(&c));
        assert_eq!(rows[c / 8][c % 8], expected);
    }
}

#[test]
fn nodal_target_file_matches_constant_target() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_oscillatory(dir.path());
    cfg.n_coarse = None;
    cfg.n_control = Some(4);
    let constant = compute_single(&cfg).unwrap();
    let path = dir.path().join("yd.txt");
    fs::write(&path, "-1\n".repeat(33 * 33)).unwrap();
    cfg.y_d = TargetSpec::File(path);
    let from_file = compute_single(&cfg).unwrap();
    assert!((constant.j_tilde - from_file.j_tilde).abs() <= 1e-14 * constant.j_tilde.abs());
}

#[test]
fn basis_cache_hits_misses_and_refuses_stale_files() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let mut cfg = ExperimentConfig::heterogeneous_example(32, 1, 8);
    cfg.n_coarse = Some(4);
    let field = make_field(&cfg).unwrap();
    let hier = build_hierarchy(4, 32, 4).unwrap();
    let ops = assemble(&hier.fine, &field, &hier.control).unwrap();

    let first = basis_cache(Some(&cache), false, &field, &hier, &ops, 2, None).unwrap();
    assert_eq!(first.status, CacheStatus::Miss);
    assert!(first.pcg_iterations > 0);
    let second = basis_cache(Some(&cache), false, &field, &hier, &ops, 2, None).unwrap();
    assert_eq!(second.status, CacheStatus::Hit);
    assert_eq!(second.pcg_iterations, 0);
    assert_eq!(first.basis, second.basis);

    // a different seed has a different fingerprint, hence a different file
    let other = make_heterogeneous(32, 2, 8, 1.0, 1350.0).unwrap();
    let third = basis_cache(Some(&cache), false, &other, &hier, &ops, 2, None).unwrap();
    assert_eq!(third.status, CacheStatus::Miss);
    assert_ne!(third.path, first.path);

    // a file under the right name with the wrong fingerprint is refused
    let fp = fingerprint(&field, 4, 32, 2);
    let path = cache_path(&cache, fp);
    fs::copy(third.path.as_ref().unwrap(), &path).unwrap();
    let err = basis_cache(Some(&cache), false, &field, &hier, &ops, 2, None).err().unwrap();
    assert!(matches!(
        err,
        ExperimentError::StaleCache {
            source: LodError::FingerprintMismatch { .. },
            ..
        }
    ));
    assert_eq!(err.exit_code(), 4);

    // corruption is reported with a hint, and --rebuild replaces the file
    fs::write(&path, b"MSLODB1\0garbage").unwrap();
    let err = basis_cache(Some(&cache), false, &field, &hier, &ops, 2, None).err().unwrap();
    assert!(err.to_string().contains("--rebuild"));
    let rebuilt = basis_cache(Some(&cache), true, &field, &hier, &ops, 2, None).unwrap();
    assert_eq!(rebuilt.status, CacheStatus::Rebuilt);
    assert_eq!(rebuilt.basis, first.basis);
}

#[test]
fn basis_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::heterogeneous_example(32, 3, 8);
    let field = make_field(&cfg).unwrap();
    let hier = build_hierarchy(8, 32, 8).unwrap();
    let ops = assemble(&hier.fine, &field, &hier.control).unwrap();
    let run = basis_cache(None, false, &field, &hier, &ops, 2, Some(3)).unwrap();
    assert_eq!(run.status, CacheStatus::Disabled);
    let path = dir.path().join("b.bin");
    save_basis(&run.basis, &path).unwrap();
    let back = load_basis(&path).unwrap();
    assert_eq!(back, run.basis);
    assert_eq!(back.meta.j, Some(3));
    assert!(load_basis_checked(&path, run.basis.meta.fingerprint ^ 1).is_err());
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_basis(&path), Err(LodError::Truncated { .. })));
    fs::write(&path, b"NOTABASIS").unwrap();
    assert!(matches!(load_basis(&path), Err(LodError::BadMagic) | Err(LodError::Truncated { .. })));
}

#[test]
fn single_point_sweep_has_empty_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_oscillatory(dir.path());
    cfg.sweep = Some(SweepSpec {
        param: SweepParam::H,
        values: vec![4],
    });
    let table = run_sweep(&cfg).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert!(table.slopes.iter().all(Option::is_none));
    let text = fs::read_to_string(cfg.output_dir.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "param,rel_l2_u,rel_l2_y,rel_energy_y,rel_l2_p,jtilde,k,seconds");
    assert_eq!(lines[2], "slope,,,,,,,");
}

#[test]
fn rho_sweep_approaches_the_fine_cost() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::oscillatory_example(64);
    cfg.n_coarse = Some(8);
    cfg.output_dir = dir.path().to_path_buf();
    cfg.sweep = Some(SweepSpec {
        param: SweepParam::Rho,
        values: vec![4, 8, 16, 32],
    });
    let table = run_sweep(&cfg).unwrap();
    let fine = table.reference_j_tilde.unwrap();
    let gaps: Vec<f64> = table.rows.iter().map(|r| (r.j_tilde - fine).abs()).collect();
    for w in gaps.windows(2) {
        assert!(w[1] < w[0], "{gaps:?}");
    }
    let u_errors: Vec<f64> = table.rows.iter().map(|r| r.errors.rel_l2_u).collect();
    for w in u_errors.windows(2) {
        assert!(w[1] < w[0], "{u_errors:?}");
    }
    assert!(table.slopes[0].unwrap() > 0.8);
}

#[test]
fn h_sweep_errors_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::oscillatory_example(64);
    cfg.output_dir = dir.path().to_path_buf();
    cfg.sweep = Some(SweepSpec {
        param: SweepParam::H,
        values: vec![4, 8, 16],
    });
    let table = run_sweep(&cfg).unwrap();
    for w in table.rows.windows(2) {
        let (a, b) = (&w[0].errors, &w[1].errors);
        assert!(b.rel_l2_u < a.rel_l2_u);
        assert!(b.rel_l2_y < a.rel_l2_y);
        assert!(b.rel_energy_y < a.rel_energy_y);
        assert!(b.rel_l2_p < a.rel_l2_p);
    }
    let rows = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5);
}
