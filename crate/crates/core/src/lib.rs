//! Distributed minimization of binary pairwise energies on 2D/3D pixel
//! grids. The grid is split into overlapping blocks whose subproblems are
//! solved independently (max-flow, exhaustive or ICM) and reconciled with
//! ADMM consensus updates.

pub mod admm;
pub mod blockform;
pub mod color;
pub mod energy;
pub mod error;
pub mod grid;
pub mod maxflow;
pub mod metrics;
pub mod oracle;
pub mod partition;
pub mod solvers;

pub use admm::{binarize, AdmmConfig, AdmmOutcome, AdmmState, Dope, TraceRecord};
pub use blockform::{assemble_block_problems, block_objective, BlockProblem};
pub use energy::{build_potts_weights, evaluate_energy, evaluate_labels, EnergyModel, SparseWeights};
pub use error::{DopeError, Result};
pub use grid::{neighbors, GridImage, GridShape, Kernel, Seed};
pub use metrics::{dice, relative_energy_diff, ComparisonReport};
pub use partition::{factor_blocks, make_partition, reconstruct, select, Block, Overlap, Partition};
pub use solvers::{solve_block, BlockSolverKind, IcmOptions};
