use mslod::assembly::{assemble, element_stiffness};
use mslod::coeff::{make_heterogeneous, SymMat2};
use mslod::grid::{build_hierarchy, expand_patch};
use mslod::linalg::{pcg, CholeskyFactor, SparseMatrix};
use mslod::lod::{build_pi_h, kernel_project, SchwarzPreconditioner};
use proptest::prelude::*;

fn stiffness(n: usize, seed: u64, blocks: usize, contrast: f64) -> SparseMatrix {
    let hier = build_hierarchy(1, n, 1).unwrap();
    let field = make_heterogeneous(n, seed, blocks, 1.0, contrast).unwrap();
    assemble(&hier.fine, &field, &hier.control).unwrap().stiffness
}

fn a_norm(a: &SparseMatrix, x: &[f64], y: &[f64]) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
    a.quadratic_form(&d).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn assembled_operators_are_symmetric(seed in 0u64..1000, n in prop::sample::select(vec![4usize, 6, 8, 12]), contrast in 1.0f64..1000.0) {
        let hier = build_hierarchy(2, n, 2).unwrap();
        let field = make_heterogeneous(n, seed, n / 2, 1.0, contrast).unwrap();
        let ops = assemble(&hier.fine, &field, &hier.control).unwrap();
        prop_assert!(ops.stiffness.is_symmetric(1e-12 * contrast));
        prop_assert!(ops.mass.is_symmetric(1e-15));
    }

    #[test]
    fn element_stiffness_rows_sum_to_zero(a11 in 0.1f64..100.0, a22 in 0.1f64..100.0, t in -0.9f64..0.9) {
        let a12 = t * (a11 * a22).sqrt();
        let ke = element_stiffness(SymMat2 { a11, a12, a22 }, 0.1);
        for row in ke {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-12 * (a11 + a22));
        }
    }

    #[test]
    fn cholesky_agrees_with_cg(seed in 0u64..1000, b in prop::collection::vec(-1.0f64..1.0, 49)) {
        let a = stiffness(8, seed, 4, 50.0);
        let direct = CholeskyFactor::factor(&a).unwrap().solve(&b).unwrap();
        let mut x = vec![0.0; b.len()];
        let report = pcg(|v, out| a.spmv_into(v, out), |r, z| z.copy_from_slice(r), &b, &mut x, 1e-13, 1000).unwrap();
        prop_assert!(report.converged);
        let scale = direct.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
        for (p, q) in direct.iter().zip(&x) {
            prop_assert!((p - q).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn cg_energy_error_never_increases(seed in 0u64..1000, b in prop::collection::vec(-1.0f64..1.0, 49)) {
        let a = stiffness(8, seed, 8, 100.0);
        let exact = CholeskyFactor::factor(&a).unwrap().solve(&b).unwrap();
        let mut prev = f64::INFINITY;
        for it in 0..30 {
            let mut x = vec![0.0; b.len()];
            pcg(|v, out| a.spmv_into(v, out), |r, z| z.copy_from_slice(r), &b, &mut x, 0.0, it).unwrap();
            let e = a_norm(&a, &x, &exact);
            prop_assert!(e <= prev * (1.0 + 1e-10) + 1e-14, "iteration {}: {} > {}", it, e, prev);
            prev = e;
        }
    }

    #[test]
    fn patches_grow_monotonically(nc in 3usize..7, vx in 1usize..6, vy in 1usize..6, layers in 0usize..4) {
        prop_assume!(vx < nc && vy < nc);
        let hier = build_hierarchy(nc, 2 * nc, nc).unwrap();
        let v = hier.coarse.node_id(vx, vy);
        let small = expand_patch(&hier, v, layers).unwrap();
        let big = expand_patch(&hier, v, layers + 1).unwrap();
        for e in &small.coarse_elements {
            prop_assert!(big.coarse_elements.contains(e));
        }
        for d in &small.fine_dofs {
            prop_assert!(big.fine_dofs.contains(d));
        }
        prop_assert!(big.coarse_elements.len() >= small.coarse_elements.len());
    }

    #[test]
    fn kernel_projection_is_idempotent(v in prop::collection::vec(-1.0f64..1.0, 225), seed in 0u64..100) {
        let hier = build_hierarchy(4, 16, 4).unwrap();
        let pi = build_pi_h(&hier);
        let once = kernel_project(&pi, &v);
        let twice = kernel_project(&pi, &once);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() < 1e-13);
        }
        for c in pi.apply(&once) {
            prop_assert!(c.abs() < 1e-13);
        }
        // the Schwarz operator maps into the kernel
        let a = {
            let field = make_heterogeneous(16, seed, 8, 1.0, 100.0).unwrap();
            assemble(&hier.fine, &field, &hier.control).unwrap().stiffness
        };
        let pre = SchwarzPreconditioner::build(&hier, &a, &pi).unwrap();
        let z = pre.apply(&v);
        for c in pi.apply(&z) {
            prop_assert!(c.abs() < 1e-11);
        }
    }

    #[test]
    fn pi_h_inverts_embedding(c in prop::collection::vec(-5.0f64..5.0, 49)) {
        let hier = build_hierarchy(8, 32, 8).unwrap();
        let pi = build_pi_h(&hier);
        let back = pi.apply(&pi.embed(&c));
        for (a, b) in c.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn fine_elements_partition_coarse_elements() {
    let hier = build_hierarchy(4, 24, 3).unwrap();
    let mut count = vec![0usize; hier.coarse.element_count()];
    for e in 0..hier.fine.element_count() {
        count[hier.coarse_parent(e)] += 1;
    }
    assert!(count.iter().all(|&c| c == 36));
}

#[test]
fn coarse_hats_form_partition_of_unity_away_from_boundary() {
    let hier = build_hierarchy(4, 16, 4).unwrap();
    let pi = build_pi_h(&hier);
    let mut sum = vec![0.0; hier.fine.interior_node_count()];
    for i in 0..pi.coarse_dim() {
        for (s, h) in sum.iter_mut().zip(pi.hat(i)) {
            *s += h;
        }
    }
    for (d, s) in sum.iter().enumerate() {
        let (ix, iy) = hier.fine.dof_index(d);
        if (4..=12).contains(&ix) && (4..=12).contains(&iy) {
            assert!((s - 1.0).abs() < 1e-14, "node ({ix}, {iy}): {s}");
        }
    }
}

#[test]
fn star_patches_cover_every_fine_dof() {
    let hier = build_hierarchy(4, 16, 4).unwrap();
    let field = make_heterogeneous(16, 1, 8, 1.0, 10.0).unwrap();
    let a = assemble(&hier.fine, &field, &hier.control).unwrap().stiffness;
    let pi = build_pi_h(&hier);
    assert!(SchwarzPreconditioner::build(&hier, &a, &pi).unwrap().covers_all_dofs());
}
