//! Worked examples that cut across modules.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tiled_monarch::reference;
use tiled_monarch::solver::objective_dense;
use tiled_monarch::*;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn problem(s: VideoShape, d: usize, seed: u64) -> AttentionProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = s.n();
    let (q, k, v) = (random_matrix(&mut rng, n, d), random_matrix(&mut rng, n, d), random_matrix(&mut rng, n, d));
    AttentionProblem::new(s, q, k, v).unwrap()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn untiled_solver_on_18_tokens_matches_loops() {
    let s = VideoShape::new(2, 3, 3).unwrap();
    let p = problem(s, 4, 18);
    let config = BlockConfig::fh_w(s);
    assert_eq!((config.b1(), config.b2()), (6, 3));
    let layout = config.layout();
    let q = layout.rows_to_monarch(p.q()).scaled(p.scale());
    let k = layout.rows_to_monarch(p.k());
    let v = layout.rows_to_monarch(p.v());
    for t in [1, 5, 10] {
        let cfg = SolverConfig::with_iterations(t);
        let (f, _) = solve(&p, &config, &cfg).unwrap();
        let (l, r) = reference::solve(&q, &k, 6, 3, t, cfg.eps_div, cfg.eps_log);
        let want = layout.rows_from_monarch(&reference::output(&l, &r, &v, 6, 3));
        let got = attention_output(&f, &layout, p.v()).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() <= 1e-10, "T={t}");
        assert!(max_diff(f.l().data(), l.data()) <= 1e-10);
    }
}

#[test]
fn tiled_solver_on_2x4x4_matches_loops() {
    let s = VideoShape::new(2, 4, 4).unwrap();
    let p = problem(s, 3, 32);
    let plan = make_tile_plan(s, &BlockConfig::fh_w(s), (1, 4, 4)).unwrap();
    assert_eq!((plan.c1(), plan.c2()), (2, 1));
    let layout = plan.layout();
    let q = layout.rows_to_monarch(p.q()).scaled(p.scale());
    let k = layout.rows_to_monarch(p.k());
    for t in [1, 3] {
        let cfg = SolverConfig::with_iterations(t);
        let (f, _) = solve_tiled(&p, &plan, &cfg).unwrap();
        let (l, r) = reference::solve_tiled(&q, &k, plan.dims(), t, cfg.eps_div, cfg.eps_log);
        assert!(max_diff(f.l().data(), l.data()) <= 1e-10);
        assert!(max_diff(f.r().data(), r.data()) <= 1e-10);
    }
}

#[test]
fn one_hot_value_column_selects_densify_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sizes = BlockSizes::new(3, 6).unwrap();
    let l = Tensor::from_fn(&[6, 3, 3], |_| rng.gen_range(-1.0..1.0));
    let r = Tensor::from_fn(&[3, 6, 6], |_| rng.gen_range(-1.0..1.0));
    let f = MonarchFactors::new(sizes, l, r).unwrap();
    let m = f.densify();
    let v = DenseMatrix::from_fn(18, 1, |row, _| (row == 7) as u8 as f64);
    let out = f.apply(&v).unwrap();
    for row in 0..18 {
        assert!((out[(row, 0)] - m[(row, 7)]).abs() < 1e-15);
    }
    let id = MonarchFactors::identity(sizes);
    let v = random_matrix(&mut rng, 18, 2);
    assert_eq!(id.apply(&v).unwrap(), v);
}

#[test]
fn uniform_factors_objective_closed_form() {
    let s = VideoShape::new(1, 3, 4).unwrap();
    let p = problem(s, 2, 5);
    let n = s.n();
    let u = DenseMatrix::from_fn(n, n, |_, _| 1.0 / n as f64);
    let logits = p.logits();
    let inner: f64 = logits.data().iter().sum::<f64>() / n as f64;
    let want = inner + n as f64 * (n as f64).ln();
    assert!((objective_dense(&u, &logits).unwrap() - want).abs() < 1e-12);
    let best = objective_dense(&p.attention_matrix(), &logits).unwrap();
    assert!(best >= objective_dense(&u, &logits).unwrap());
}

#[test]
fn attention_limits() {
    // orthonormal Q = K with a large scale concentrates on the diagonal
    let s = VideoShape::new(1, 1, 4).unwrap();
    let eye = DenseMatrix::identity(4);
    let p = AttentionProblem::new(s, eye.clone(), eye.clone(), eye.clone())
        .unwrap()
        .with_scale(200.0)
        .unwrap();
    assert!(p.attention_matrix().max_abs_diff(&eye).unwrap() < 1e-80);
    // one shared query gives identical rows
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = DenseMatrix::from_fn(4, 1, |_, _| 0.7);
    let k = random_matrix(&mut rng, 4, 1);
    let a = AttentionProblem::new(s, q, k, eye).unwrap().attention_matrix();
    for r in 1..4 {
        assert_eq!(a.row(r), a.row(0));
    }
}

#[test]
fn topk_ties_keep_lowest_index() {
    for (row, want) in [([0.5, 0.5], [0.5, 0.0]), ([0.3, 0.7], [0.0, 0.7]), ([0.7, 0.3], [0.7, 0.0])] {
        let a = DenseMatrix::from_rows(&[row.to_vec()]).unwrap();
        assert_eq!(topk_oracle(&a, 1).unwrap().row(0), want);
    }
    let a = DenseMatrix::from_rows(&[vec![0.2, 0.2, 0.2, 0.4]]).unwrap();
    assert_eq!(topk_oracle(&a, 2).unwrap().row(0), [0.2, 0.0, 0.0, 0.4]);
}

#[test]
fn permutation_round_trips_positional_map() {
    let s = VideoShape::new(2, 3, 3).unwrap();
    let d = positional_matrix(s, &Kernels::default());
    for c in enumerate_aligned_configs(s) {
        let perm = c.layout().permutation().clone();
        let p = perm.to_matrix();
        let moved = p.transpose().matmul(&d).unwrap();
        assert_eq!(p.matmul(&moved).unwrap(), d);
        assert_eq!(perm.unpermute_rows(&perm.permute_rows(&d)), d);
    }
}

#[test]
fn misaligned_blocks_lose_rank_one_structure() {
    let s = VideoShape::new(2, 3, 3).unwrap();
    let d = positional_matrix(s, &Kernels::uniform(DistanceKernel::Exponential(0.5)));
    let aligned = verify_blockwise_rank1(&d, &BlockConfig::fh_w(s), 1e-12).unwrap();
    assert!(aligned.passed);
    let flat = BlockConfig::flat(s, 9, 2).unwrap();
    assert!(!flat.is_aligned());
    let mis = verify_blockwise_rank1(&d, &flat, 1e-12).unwrap();
    assert!(mis.max_ratio > 0.05, "{}", mis.max_ratio);
}

#[test]
fn semantic_spike_shows_at_requested_pair() {
    let s = VideoShape::new(2, 3, 3).unwrap();
    let spec = SyntheticModelSpec {
        semantic: SemanticPattern::from_pairs(vec![(8, 2)]),
        ..SyntheticModelSpec::positional(s)
    };
    let a = generate(&spec).unwrap().a;
    let d = positional_matrix(s, &Kernels::default());
    let lift = a.sub(&d).unwrap();
    for r in 0..18 {
        for c in 0..18 {
            let want = if (r, c) == (8, 2) { 1.0 } else { 0.0 };
            assert_eq!(lift[(r, c)], want);
        }
    }
}

#[test]
fn monarch_budgets_cannot_reach_the_lowest_sweep_densities() {
    let s = VideoShape::new(4, 6, 8).unwrap();
    for t in [0.03, 0.05] {
        assert!(matches!(
            budget_match(s, Method::MonarchProject, t),
            Err(Error::InfeasibleBudget { .. })
        ));
        assert!(matches!(budget_match(s, Method::TopK, t), Ok(Budget::TopK { .. })));
    }
}

#[test]
fn tiled_density_is_counted_from_tensors() {
    let s = VideoShape::new(4, 6, 8).unwrap();
    let base = BlockConfig::fh_w(s);
    for nf in [1, 2, 4] {
        let plan = make_tile_plan(s, &base, (nf, 6, 8)).unwrap();
        let z = TiledMonarchFactors::zeros(plan.dims());
        let n = s.n() as f64;
        let counted = (z.l().len() + z.r().len()) as f64 / (n * n);
        assert_eq!(param_count_tiled(plan.dims()).density, counted);
    }
}
