mod common;

use common::{gaussian, permute_rows_cols};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tsgnn_core::cli::checks::{all_archs, equivariance_deviation, random_graph};
use tsgnn_core::eqlayers::{
    deepsets_linear, dss_linear, ts_linear, tsnet_forward, Nonlinearity, TsLinearParams, TsNetModel,
};
use tsgnn_core::ndarr::DenseArray;
use tsgnn_core::symmetry::{apply_to_graph, permute_axis, Perm, PermTriple};
use tsgnn_core::tsgnn::{solve_mixers, TsGnnModel};

const TOL: f64 = 1e-10;

fn random_params(rng: &mut ChaCha8Rng, k1: usize, k2: usize) -> TsLinearParams {
    TsLinearParams::new((0..12).map(|_| gaussian(rng, &[k1, k2])).collect()).unwrap()
}

fn permute3(a: &DenseArray, p0: &Perm, p1: &Perm) -> DenseArray {
    permute_axis(&permute_axis(a, 0, p0).unwrap(), 1, p1).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deepsets_layer_commutes_with_node_permutations(seed: u64, n in 1usize..8, f1 in 1usize..4, f2 in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, &[n, f1]);
        let (l1, l2) = (gaussian(&mut rng, &[f1, f2]), gaussian(&mut rng, &[f1, f2]));
        let p = Perm::random(n, &mut rng);
        let lhs = deepsets_linear(&permute_axis(&x, 0, &p).unwrap(), &l1, &l2).unwrap();
        let rhs = permute_axis(&deepsets_linear(&x, &l1, &l2).unwrap(), 0, &p).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= TOL);
    }

    #[test]
    fn dss_layer_commutes_with_node_and_feature_permutations(seed: u64, n in 1usize..6, f in 1usize..5, k in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, &[n, f, k]);
        let ls = [0, 1, 2, 3].map(|_| gaussian(&mut rng, &[k, 2]));
        let (pn, pf) = (Perm::random(n, &mut rng), Perm::random(f, &mut rng));
        let lhs = dss_linear(&permute3(&x, &pn, &pf), &ls).unwrap();
        let rhs = permute3(&dss_linear(&x, &ls).unwrap(), &pn, &pf);
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() <= TOL);
    }

    #[test]
    fn ts_linear_commutes_with_all_three_permutations(
        seed: u64, n in 1usize..6, f in 1usize..5, c in 1usize..4, k1 in 1usize..3, k2 in 1usize..3,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = gaussian(&mut rng, &[n, f, k1]);
        let y = gaussian(&mut rng, &[n, c, k1]);
        let p = random_params(&mut rng, k1, k2);
        let (pn, pf, pc) = (Perm::random(n, &mut rng), Perm::random(f, &mut rng), Perm::random(c, &mut rng));
        let (t1, t2) = ts_linear(&x, &y, &p).unwrap();
        let (u1, u2) = ts_linear(&permute3(&x, &pn, &pf), &permute3(&y, &pn, &pc), &p).unwrap();
        prop_assert!(u1.max_abs_diff(&permute3(&t1, &pn, &pf)).unwrap() <= TOL);
        prop_assert!(u2.max_abs_diff(&permute3(&t2, &pn, &pc)).unwrap() <= TOL);
    }

    #[test]
    fn tsnet_is_label_equivariant_and_feature_invariant(
        seed: u64, n in 1usize..7, f in 1usize..5, c in 1usize..4, hidden in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = vec![random_params(&mut rng, 1, hidden), random_params(&mut rng, hidden, 1)];
        let model = TsNetModel::new(layers, Nonlinearity::Relu).unwrap();
        let x = gaussian(&mut rng, &[n, f]);
        let y = gaussian(&mut rng, &[n, c]);
        let (pn, pf, pc) = (Perm::random(n, &mut rng), Perm::random(f, &mut rng), Perm::random(c, &mut rng));
        let out = tsnet_forward(&model, &x, &y).unwrap();
        let moved = tsnet_forward(&model, &permute_rows_cols(&x, &pn, &pf), &permute_rows_cols(&y, &pn, &pc)).unwrap();
        prop_assert!(moved.max_abs_diff(&permute_rows_cols(&out, &pn, &pc)).unwrap() <= TOL);
    }

    #[test]
    fn tsgnn_forward_is_equivariant(seed: u64, arch_ix in 0usize..12, n in 3usize..10, f in 1usize..5, c in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = all_archs(2, 3).swap_remove(arch_ix);
        let model = TsGnnModel::init(arch, &mut rng).unwrap();
        let graph = random_graph(&mut rng, n, f, c, 0.5);
        let visible = graph.splits().train.clone();
        let perm = PermTriple {
            sigma_n: Perm::random(n, &mut rng),
            sigma_f: Perm::random(f, &mut rng),
            sigma_c: Perm::random(c, &mut rng),
        };
        prop_assert!(equivariance_deviation(&model, &graph, &visible, &perm).unwrap() <= 1e-9);
    }

    #[test]
    fn mixers_transform_with_the_permutation(seed: u64, n in 4usize..10, f in 1usize..5, c in 2usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_graph(&mut rng, n, f, c, 0.5);
        let perm = PermTriple {
            sigma_n: Perm::random(n, &mut rng),
            sigma_f: Perm::random(f, &mut rng),
            sigma_c: Perm::random(c, &mut rng),
        };
        let moved = apply_to_graph(&perm, &g).unwrap();
        let vis = g.splits().train.clone();
        let vis_moved: Vec<usize> = vis.iter().map(|&v| perm.sigma_n.image(v)).collect();
        let m = solve_mixers(&g, g.features(), &g.one_hot_visible(&vis), &vis, 1e-3).unwrap();
        let mm = solve_mixers(&moved, moved.features(), &moved.one_hot_visible(&vis_moved), &vis_moved, 1e-3).unwrap();
        // the bias row stays last
        let extend = |p: &Perm| {
            let mut v = p.map().to_vec();
            v.push(p.len());
            Perm::new(v).unwrap()
        };
        let want_f = permute_rows_cols(&m.t_f, &extend(&perm.sigma_f), &perm.sigma_c);
        let want_c = permute_rows_cols(&m.t_c, &extend(&perm.sigma_c), &perm.sigma_f);
        prop_assert!(mm.t_f.max_abs_diff(&want_f).unwrap() <= 1e-9);
        prop_assert!(mm.t_c.max_abs_diff(&want_c).unwrap() <= 1e-9);
    }
}

/// Dense ridge fit of `[ÂX | 1] → Y` on visible rows, solved with nalgebra.
#[test]
fn feature_to_label_mixer_matches_dense_ridge() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = random_graph(&mut rng, 12, 4, 3, 0.4);
    let vis = g.splits().train.clone();
    let y = g.one_hot_visible(&vis);
    let lambda = 1e-2;
    let m = solve_mixers(&g, g.features(), &y, &vis, lambda).unwrap();

    let (n, f, c) = (12, 4, 3);
    let mut a = nalgebra::DMatrix::zeros(n, n);
    for v in 0..n {
        for &u in g.neighbors(v) {
            a[(v, u)] = 1.0 / g.degree(v) as f64;
        }
    }
    let x = nalgebra::DMatrix::from_row_slice(n, f, g.features().data());
    let ax = a * x;
    let mut r = nalgebra::DMatrix::zeros(vis.len(), f + 1);
    let mut t = nalgebra::DMatrix::zeros(vis.len(), c);
    for (row, &v) in vis.iter().enumerate() {
        for j in 0..f {
            r[(row, j)] = ax[(v, j)];
        }
        r[(row, f)] = 1.0;
        t[(row, g.labels()[v])] = 1.0;
    }
    let lam_eff = lambda * r.norm_squared() / (f + 1) as f64;
    assert!((m.lambda_f - lam_eff).abs() <= 1e-12 * lam_eff);
    let gram = r.transpose() * &r + nalgebra::DMatrix::identity(f + 1, f + 1) * lam_eff;
    let sol = gram.lu().solve(&(r.transpose() * t)).unwrap();
    for i in 0..=f {
        for j in 0..c {
            assert!((m.t_f.at2(i, j) - sol[(i, j)]).abs() <= 1e-9, "({i},{j})");
        }
    }
}

/// The ridge strength passed in is dimensionless: the applied strength
/// tracks the energy of the regressors.
#[test]
fn effective_ridge_scales_with_regressor_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = random_graph(&mut rng, 10, 3, 2, 0.5);
    let vis = g.splits().train.clone();
    let y = g.one_hot_visible(&vis);
    let base = solve_mixers(&g, g.features(), &y, &vis, 1e-2).unwrap();
    let scaled = solve_mixers(&g, &g.features().scale(1e3), &y, &vis, 1e-2).unwrap();
    // λ_eff grows with trace(RᵀR) ≈ s² for large s
    let ratio = scaled.lambda_f / base.lambda_f;
    assert!(ratio > 1e5 && ratio <= 1e6 * (1.0 + 1e-9), "{ratio}");
}
