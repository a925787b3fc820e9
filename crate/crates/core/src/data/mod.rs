//! Interaction data: raw records, filtering, splitting, graphs, noise
//! injection and triple sampling.

pub mod dataset;
pub mod graph;
pub mod kcore;
pub mod noise;
pub mod records;
pub mod sampling;

pub use dataset::{split_dataset, Dataset, Interaction, Split, SplitRatios};
pub use graph::{build_graph, Edge, EdgeKind, GraphEdge, InteractionGraph, NormalizedAdjacency};
pub use kcore::kcore_filter;
pub use noise::{inject_noise, NoiseLedger};
pub use records::{read_catalog, read_interactions, InteractionRecord, ItemText, TextCatalog, UserComment};
pub use sampling::{sample_triples, sample_triples_seeded, Triple, TripleBatch};
