//! Random-walk hitting and commute times on directed graphs, computed
//! through a divergence-form digraph Laplacian with a randomized low-rank
//! pseudoinverse, alongside exact Markov-chain oracles for validation.
//! Commute times drive per-edge proximity weights inside a direction-aware
//! message-passing classifier; a similarity-based rewiring step guarantees
//! the irreducibility and aperiodicity the spectral machinery needs.

pub mod analysis;
pub mod commute;
pub mod data;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod io;
pub mod oracle;
pub mod pipeline;
pub mod rewire;
pub mod sparse;
pub mod spectral;

pub use data::{Dataset, FeatureMatrix, LabelVector, SplitAssignment};
pub use error::{Error, Result, StageError};
pub use graph::{
    add_self_loops, build_digraph, incidence_matrix, permute, scc_components, strongly_connected,
    transition_matrix, DiGraph, IncidenceMatrix, StochasticMatrix,
};
pub use rewire::{anchor_vector, density_delta, rewire, similarity_order, RewiringResult};
pub use spectral::{
    digraph_laplacian, perron_vector, pseudoinverse_factors, randomized_truncated_svd,
    weighted_laplacian, DigraphLaplacian, LowRankFactors, PerronVector,
};
pub use commute::{
    commute_change_delta, edge_commute_times, fundamental_matrix_from_laplacian,
    hitting_commute_closed_form, proximity_weights, CommuteMatrices, ProximityWeights,
};
pub use gnn::{
    commute_layer, dirgnn_forward, evaluate, forward, gradient_check, load_checkpoint,
    save_checkpoint, train, CommuteBackend, LayerParams, ModelParams, TrainConfig,
};
pub use oracle::{
    dense_fundamental, hitting_from_z, monte_carlo_hitting, ppr_transition, series_fundamental,
    McEstimate, OracleReport,
};
pub use analysis::{
    heterophily_distances, homophily_ratio, label_similarity_matrix, DiagnosticsReport,
};
pub use io::{generate_synthetic, load_dataset, write_dataset, DatasetPaths, RunConfig, SynthKind};
