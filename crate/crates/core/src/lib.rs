//! Tiled Monarch approximations of attention over video token grids.
//!
//! Tokens live on an `f x h x w` grid. A [`BlockConfig`] fixes a token ordering
//! and block sizes `(b1, b2)` with `b1 * b2 = N`; [`solve`] and [`solve_tiled`]
//! fit Monarch factors to `softmax(s * Q Kᵀ)` by alternating closed-form
//! updates, and [`project`] / [`project_tiled`] fit them to a given matrix.

pub mod baselines;
pub mod bench;
pub mod contract;
pub mod error;
pub mod layout;
pub mod monarch;
pub mod reference;
pub mod solver;
pub mod svd;
pub mod synth;
pub mod tensor;
pub mod verify;

pub use baselines::{
    budget_match, dense_attention, lowrank_oracle, top_p_coverage, topk_oracle, ApproxReport,
    Budget, Coverage, Method,
};
pub use error::{Error, Result};
pub use layout::{
    enumerate_aligned_configs, make_tile_plan, neighborhood_candidates, Axis, BlockConfig,
    LayoutPermutation, LayoutPlan, TilePlan, TokenOrdering, VideoShape,
};
pub use monarch::{
    decode_factors, embed_tied, encode_factors, param_count, param_count_tiled, project,
    project_tiled, strictness_counterexample, text_dump, AnyFactors, BlockSizes, MonarchFactors,
    ParamCount, StructuredAttention, TileDims, TiledMonarchFactors,
};
pub use solver::{
    attention_output, objective, solve, solve_tiled, AttentionProblem, SolverConfig, SolverTrace,
};
pub use synth::{
    generate, positional_matrix, verify_blockwise_rank1, DistanceKernel, Kernels, Normalize,
    SemanticPattern, SyntheticAttention, SyntheticModelSpec,
};
pub use tensor::{frobenius_mse, DenseMatrix, Tensor};
