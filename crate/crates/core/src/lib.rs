//! Capacity analysis of layered networks.
//!
//! A model's capacity is split across input subspaces by `κ(S) = ‖Kᵀ S‖²_F`,
//! where `K` is an orthonormal basis of the directions its parameters can
//! move. Non-linear layers are handled in an augmented input space; with
//! pseudo-random activations the input-space capacity follows the linear
//! recursion `κ^{l−1} = D_l κ^l`, whose residual deep limit is a diffusion.
//!
//! Everything numeric is generic over [`Real`] (`f32`, `f64`); the `*F64`
//! and `*F32` aliases below name the common instantiations.

pub mod analyze;
pub mod augment;
pub mod capacity;
pub mod deeplimit;
pub mod error;
pub mod linalg;
pub mod matrix;
pub mod oracle;
pub mod propagate;
pub mod scalar;
pub mod seeding;

pub use analyze::{
    enumerate_path_weights, erf_profile, erf_scaling, max_path_weight, shatter_report,
    uniform_path_weight, ErfReport, ErfScaling, MaxPathWeight, PathEnumeration, ShatterReport,
};
pub use augment::{
    augmented_capacity_basis, augmented_spatial_profile, build_augmented_covariance,
    build_augmented_projection, build_differential_covariance, build_differential_projection,
    decoupling_nu, estimate_nu_monte_carlo, linear_stacked_basis, Activation, AugmentedLayout,
    AugmentedSpace, DecouplingReport,
};
pub use capacity::{
    capacity_of_subspace, gram_capacity_basis, orthonormal_basis, spatial_profile, CapacityBasis,
    CovarianceMatrix, ParamMap, ProjectionMatrix, SpatialCapacity, SubspaceSelector,
};
pub use deeplimit::{
    compare_markov_pde, evolve_markov, gaussian_solution, random_layer_chain, residual_chain,
    residual_generator, Boundary, DeepLimitConfig, MarkovPdeReport, PdeField, ResidualGenerator,
};
pub use error::{CapacityError, Result};
pub use matrix::Matrix;
pub use oracle::{
    empirical_sigma_tilde, empirical_spatial_capacity, fit_optimal_last_layer, pseudo_random_eta,
    verify_stationarity, AugmentedTarget, EmpiricalReport, ExperimentConfig, InputSampler,
    PseudoRandomSign, StationarityReport,
};
pub use propagate::{
    differential_propagation_matrix, propagate_chain, propagate_single, propagation_matrix,
    ChainLayer, LayerChain, LayerFlavor, PropagationOperator,
};
pub use scalar::Real;

pub type MatrixF64 = Matrix<f64>;
pub type MatrixF32 = Matrix<f32>;
pub type CovarianceMatrixF64 = CovarianceMatrix<f64>;
pub type CovarianceMatrixF32 = CovarianceMatrix<f32>;
pub type ProjectionMatrixF64 = ProjectionMatrix<f64>;
pub type ProjectionMatrixF32 = ProjectionMatrix<f32>;
pub type CapacityBasisF64 = CapacityBasis<f64>;
pub type CapacityBasisF32 = CapacityBasis<f32>;
pub type SubspaceSelectorF64 = SubspaceSelector<f64>;
pub type SubspaceSelectorF32 = SubspaceSelector<f32>;
pub type SpatialCapacityF64 = SpatialCapacity<f64>;
pub type SpatialCapacityF32 = SpatialCapacity<f32>;
pub type ParamMapF64 = ParamMap<f64>;
pub type ParamMapF32 = ParamMap<f32>;
pub type PropagationOperatorF64 = PropagationOperator<f64>;
pub type PropagationOperatorF32 = PropagationOperator<f32>;
pub type LayerChainF64 = LayerChain<f64>;
pub type LayerChainF32 = LayerChain<f32>;
pub type ResidualGeneratorF64 = ResidualGenerator<f64>;
pub type ResidualGeneratorF32 = ResidualGenerator<f32>;
pub type ExperimentConfigF64 = ExperimentConfig<f64>;
pub type ExperimentConfigF32 = ExperimentConfig<f32>;
