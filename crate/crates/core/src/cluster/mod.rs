//! Unsupervised clustering of extracted features and the evaluation metrics
//! built on it.

mod hungarian;
mod js;
mod kmeans;
mod spectral;

pub use hungarian::{clustering_accuracy, contingency, matched_accuracy, max_weight_assignment};
pub use js::{distribution_js, interclass_js, js_divergence, JsMatrix};
pub use kmeans::{kmeans, kmeans_plus_plus, lloyd, KMeansConfig, LloydRun};
pub use spectral::{jacobi_eigen, normalized_laplacian, spectral, spectral_embedding, SpectralConfig};

/// Cluster id per point.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment<T> {
    pub ids: Vec<usize>,
    pub num_clusters: usize,
    /// k-means objective, when the method has one.
    pub inertia: Option<T>,
}

impl<T> ClusterAssignment<T> {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &c in &self.ids {
            sizes[c] += 1;
        }
        sizes
    }
}
