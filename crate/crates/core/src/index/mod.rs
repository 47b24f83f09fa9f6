//! Learned cluster index: a classifier shared by queries and objects maps
//! both to a distribution over clusters, objects are stored in the inverted
//! lists of their most probable clusters, and queries scan only the lists
//! they are routed to.

mod classifier;
mod cluster;
mod feature;
mod io;
mod mcl;
mod pseudo;
mod quality;
mod train;

pub use classifier::{default_hidden_width, top_clusters, ClusterClassifier, DEFAULT_LAYERS};
pub use cluster::{partition, ClusterIndex, ObjectStore, Router};
pub use feature::{build_feature, IndexFeature};
pub(crate) use feature::{scaled_loc, write_feature};
pub use io::{read_index, read_index_file, write_index, write_index_file, INDEX_MAGIC};
pub use mcl::{mcl_loss, mcl_loss_grad, MclGrad, MCL_EPS};
pub use pseudo::{generate_pseudo_negatives, generate_pseudo_pools, PseudoLabelConfig};
pub use quality::{evaluate_clusters, imbalance, quality_from_routes, ClusterQualityReport};
pub use train::{train_index, train_index_with_pools, IndexTrainConfig, IndexTrainReport};
