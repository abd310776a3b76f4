use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tiled_monarch::reference;
use tiled_monarch::*;

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

/// Tile dims with `N = b1 * b2 <= 24`.
fn tile_dims() -> impl Strategy<Value = TileDims> {
    (1usize..=6, 1usize..=6)
        .prop_filter("N <= 24", |(b1, b2)| b1 * b2 <= 24)
        .prop_flat_map(|(b1, b2)| {
            (
                Just(b1),
                Just(b2),
                proptest::sample::select(divisors(b1)),
                proptest::sample::select(divisors(b2)),
            )
        })
        .prop_map(|(b1, b2, c1, c2)| TileDims::new(b1, b2, c1, c2).unwrap())
}

fn shape(max_n: usize) -> impl Strategy<Value = VideoShape> {
    (1usize..=4, 1usize..=4, 1usize..=4)
        .prop_filter("N bound", move |(f, h, w)| f * h * w <= max_n)
        .prop_map(|(f, h, w)| VideoShape::new(f, h, w).unwrap())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_tiled(dims: TileDims, seed: u64) -> TiledMonarchFactors {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = Tensor::from_fn(&dims.l_shape(), |_| rng.gen_range(-1.0..1.0));
    let r = Tensor::from_fn(&dims.r_shape(), |_| rng.gen_range(-1.0..1.0));
    TiledMonarchFactors::new(dims, l, r).unwrap()
}

fn problem(s: VideoShape, d: usize, seed: u64) -> AttentionProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = s.n();
    AttentionProblem::new(
        s,
        random_matrix(&mut rng, n, d),
        random_matrix(&mut rng, n, d),
        random_matrix(&mut rng, n, d),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn apply_agrees_with_densify(dims in tile_dims(), d in 1usize..5, seed: u64) {
        let f = random_tiled(dims, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let v = random_matrix(&mut rng, dims.n(), d);
        let want = f.densify().matmul(&v).unwrap();
        prop_assert!(f.apply(&v).unwrap().max_abs_diff(&want).unwrap() < 1e-12);
        prop_assert!(f.densify().max_abs_diff(&reference::densify_tiled(f.l(), f.r(), dims)).unwrap() == 0.0);
    }

    #[test]
    fn tied_embedding_preserves_the_matrix(dims in tile_dims(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sizes = dims.sizes();
        let l = Tensor::from_fn(&[sizes.b2, sizes.b1, sizes.b1], |_| rng.gen_range(-1.0..1.0));
        let r = Tensor::from_fn(&[sizes.b1, sizes.b2, sizes.b2], |_| rng.gen_range(-1.0..1.0));
        let f = MonarchFactors::new(sizes, l, r).unwrap();
        let t = embed_tied(&f, dims).unwrap();
        prop_assert!(t.densify().max_abs_diff(&f.densify()).unwrap() <= 1e-13);
        prop_assert_eq!(t.param_count(), param_count_tiled(dims));
    }

    #[test]
    fn orderings_are_bijections(s in shape(64)) {
        let mut configs = enumerate_aligned_configs(s);
        configs.push(BlockConfig::dense(s));
        for c in configs {
            for ord in [c.monarch_ordering(), c.rho_ordering()] {
                let mut seen = vec![false; s.n()];
                for pos in s.positions() {
                    let ix = ord.flatten_index(pos).unwrap();
                    prop_assert!(!seen[ix]);
                    seen[ix] = true;
                }
            }
            let perm = c.layout().permutation().clone();
            let p = perm.to_matrix();
            prop_assert_eq!(p.matmul(&p.transpose()).unwrap(), DenseMatrix::identity(s.n()));
            let m = DenseMatrix::from_fn(s.n(), 3, |r, col| (r * 3 + col) as f64);
            prop_assert_eq!(perm.unpermute_rows(&perm.permute_rows(&m)), m);
        }
        for nb in neighborhood_candidates(s) {
            let plan = make_tile_plan(s, &BlockConfig::fh_w(s), nb).unwrap();
            let ord = plan.monarch_ordering();
            let mut seen = vec![false; s.n()];
            for pos in s.positions() {
                let ix = ord.flatten_index(pos).unwrap();
                prop_assert!(!seen[ix]);
                seen[ix] = true;
            }
        }
    }

    #[test]
    fn solver_output_is_row_stochastic(s in shape(24), d in 1usize..5, iters in 1usize..4, seed: u64, tiled: bool) {
        let p = problem(s, d, seed);
        let cfg = SolverConfig::with_iterations(iters);
        let m = if tiled {
            let nbs = neighborhood_candidates(s);
            let nb = nbs[(seed as usize) % nbs.len()];
            let plan = make_tile_plan(s, &BlockConfig::fh_w(s), nb).unwrap();
            solve_tiled(&p, &plan, &cfg).unwrap().0.densify()
        } else {
            solve(&p, &BlockConfig::fh_w(s), &cfg).unwrap().0.densify()
        };
        for sum in m.row_sums() {
            prop_assert!((sum - 1.0).abs() <= 1e-10);
        }
        prop_assert!(m.data().iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn param_counts_are_element_counts(dims in tile_dims()) {
        let pc = param_count_tiled(dims);
        let zeros = TiledMonarchFactors::zeros(dims);
        prop_assert_eq!(pc.l, zeros.l().len());
        prop_assert_eq!(pc.r, zeros.r().len());
        let base = param_count(dims.sizes());
        prop_assert_eq!(pc.l, dims.c2 * base.l);
        prop_assert_eq!(pc.r, dims.c1 * base.r);
        let n = dims.n() as f64;
        prop_assert!((pc.density - pc.total as f64 / (n * n)).abs() < 1e-15);
    }

    #[test]
    fn topk_matches_subset_search(n in 1usize..=8, k_frac in 0.0f64..1.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.gen_range(0.0..1.0));
        let k = 1 + ((n - 1) as f64 * k_frac) as usize;
        let got = topk_oracle(&a, k).unwrap();
        for r in 0..n {
            prop_assert_eq!(got.row(r).iter().filter(|x| **x != 0.0).count(), k);
            // best kept mass over every k-subset of the row
            let best = (0u32..1 << n)
                .filter(|mask| mask.count_ones() as usize == k)
                .map(|mask| (0..n).filter(|c| mask >> c & 1 == 1).map(|c| a[(r, c)]).sum::<f64>())
                .fold(f64::MIN, f64::max);
            let kept: f64 = got.row(r).iter().sum();
            prop_assert!((kept - best).abs() < 1e-12);
        }
    }

    #[test]
    fn solver_matches_loops(s in shape(16), d in 1usize..4, iters in 1usize..4, seed: u64) {
        let p = problem(s, d, seed);
        let config = BlockConfig::fh_w(s);
        let cfg = SolverConfig::with_iterations(iters);
        let (f, _) = solve(&p, &config, &cfg).unwrap();
        let layout = config.layout();
        let q = layout.rows_to_monarch(p.q()).scaled(p.scale());
        let k = layout.rows_to_monarch(p.k());
        let (l, r) = reference::solve(&q, &k, config.b1(), config.b2(), iters, cfg.eps_div, cfg.eps_log);
        for (a, b) in f.l().data().iter().zip(l.data()).chain(f.r().data().iter().zip(r.data())) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
