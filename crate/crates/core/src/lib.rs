//! Learned relevance scoring and learning-to-cluster indexing for
//! embedding-based spatial keyword queries.
//!
//! The pipeline mirrors the usual train → index → query flow:
//!
//! 1. [`relevance`] trains a scorer that combines the textual inner product
//!    with a learnable monotone step function of spatial proximity, weighted
//!    per query by a small head network.
//! 2. [`index`] trains a shared cluster classifier on query/object features
//!    using ground-truth positives and pseudo-negatives mined with the frozen
//!    scorer, then partitions objects into inverted lists.
//! 3. [`search`] routes each query to its most probable clusters and ranks
//!    only their members. Brute force, IVF, and spatially weighted IVF are
//!    provided as baselines.
//!
//! [`eval`] measures Recall@k / NDCG@k and effectiveness–efficiency
//! trade-offs, and [`data`] generates planted synthetic datasets and handles
//! the on-disk formats.

pub mod binio;
pub mod data;
pub mod domain;
pub mod error;
pub mod eval;
pub mod index;
pub mod nn;
pub mod par;
pub mod relevance;
pub mod search;

pub use domain::{
    compute_bounds_and_distmax, dot, s_dist, Bounds, Dataset, Embedding, Extent, GeoObject, GeoPoint,
    GroundTruthSet, SpatialQuery, Split,
};
pub use error::{Error, Result};
pub use par::Parallelism;
