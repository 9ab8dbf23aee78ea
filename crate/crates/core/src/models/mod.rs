//! Candidate learners (MLP, k-means, linear SVM) and their metrics.

pub mod kmeans;
pub mod metrics;
pub mod mlp;
pub mod svm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{train_kmeans, KMeansConfig, KMeansModel};
pub use metrics::{classification_score, f1_score, macro_f1, v_measure, MetricKind, MetricReport};
pub use mlp::{predict_mlp, train_mlp, Activation, Dense, MlpConfig, MlpModel};
pub use svm::{train_svm, SvmConfig, SvmModel};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unsuitable data: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("malformed model file: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    Mlp(MlpModel),
    KMeans(KMeansModel),
    Svm(SvmModel),
}

impl TrainedModel {
    /// Total scalar parameters.
    pub fn param_count(&self) -> usize {
        match self {
            TrainedModel::Mlp(m) => m.param_count(),
            TrainedModel::KMeans(m) => m.param_count(),
            TrainedModel::Svm(m) => m.param_count(),
        }
    }

    pub fn to_file_text(&self) -> String {
        let file = match self {
            TrainedModel::Mlp(m) => ModelFile {
                version: MODEL_FILE_VERSION,
                architecture: Architecture::Mlp {
                    topology: m.topology(),
                    activation: m.activation,
                },
                params: m.flat_params(),
            },
            TrainedModel::KMeans(m) => ModelFile {
                version: MODEL_FILE_VERSION,
                architecture: Architecture::Kmeans {
                    k: m.k(),
                    dims: m.dims(),
                },
                params: m.centroids.iter().flatten().copied().collect(),
            },
            TrainedModel::Svm(m) => ModelFile {
                version: MODEL_FILE_VERSION,
                architecture: Architecture::Svm { dims: m.weights.len() },
                params: m.weights.iter().copied().chain(std::iter::once(m.bias)).collect(),
            },
        };
        let mut text = serde_json::to_string_pretty(&file).expect("model file serializes");
        text.push('\n');
        text
    }

    pub fn from_file_text(text: &str) -> Result<TrainedModel, ModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Format(e.to_string()))?;
        if file.version != MODEL_FILE_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported model file version {}",
                file.version
            )));
        }
        let expect = |n: usize| {
            if file.params.len() == n {
                Ok(())
            } else {
                Err(ModelError::Format(format!(
                    "{} parameters, architecture needs {n}",
                    file.params.len()
                )))
            }
        };
        match file.architecture {
            Architecture::Mlp { topology, activation } => {
                if topology.len() < 2 || topology.contains(&0) {
                    return Err(ModelError::Format(format!("bad topology {topology:?}")));
                }
                let mut m = MlpModel::init(&topology, activation, 0);
                expect(m.param_count())?;
                m.set_flat_params(&file.params)?;
                Ok(TrainedModel::Mlp(m))
            }
            Architecture::Kmeans { k, dims } => {
                expect(k * dims)?;
                let centroids = file.params.chunks(dims.max(1)).map(<[f64]>::to_vec).collect();
                Ok(TrainedModel::KMeans(KMeansModel {
                    centroids,
                    wcss_trace: vec![],
                }))
            }
            Architecture::Svm { dims } => {
                expect(dims + 1)?;
                Ok(TrainedModel::Svm(SvmModel {
                    weights: file.params[..dims].to_vec(),
                    bias: file.params[dims],
                }))
            }
        }
    }
}

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    architecture: Architecture,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Architecture {
    Mlp {
        topology: Vec<usize>,
        activation: Activation,
    },
    Kmeans {
        k: usize,
        dims: usize,
    },
    Svm {
        dims: usize,
    },
}
