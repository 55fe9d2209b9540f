//! Phenotype clusters: kNN graph, Leiden communities, label transfer.

mod cluster;
mod knn;
mod leiden;

pub use cluster::{
    assign_clusters, cluster_once, cluster_purity, subsample_indices, subsample_vectors, two_pass_cluster,
    ArtifactRule, ClusterConfig, ClusterModel, Purity, TwoPassResult,
};
pub use knn::{build_knn_graph, knn_lists, Metric, NeighborGraph, PointSet};
pub use leiden::{communities_connected, leiden, modularity, LeidenConfig, LeidenResult, Partition};

