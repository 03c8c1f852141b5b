//! Biclustering of computer event logs with a multilayer Poisson latent
//! block model.
//!
//! Events (network flows, authentication records) are turned into a
//! bipartite multiplex graph ([`graph`]), both node sets are clustered by
//! block expectation-maximization ([`inference`]), the cluster counts are
//! chosen by ICL ([`selection`]) and the fit is condensed into a
//! cluster-level graph for inspection ([`summary`]).

pub mod cli;
pub mod error;
pub mod graph;
pub mod inference;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod selection;
pub mod summary;

pub use error::{Error, Result};
pub use graph::{EntityCatalog, LayerCatalog, LayeredBiadjacency, MultiplexBipartiteGraph, Side};
pub use inference::{fit, fit_multi_restart, FitConfig, FitResult};
pub use model::{HardPartition, ModelParams, SoftAssignments};
pub use selection::{grid_search, icl, GridSpec, SelectionReport};
pub use summary::ClusterGraphSummary;
