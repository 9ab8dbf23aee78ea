//! Template-based emission of backend programs from trained models, plus
//! reference interpreters that execute the emitted text.

pub mod cgra;
pub mod fixed;
pub mod mat;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, PerfReport, ResourceReport};

pub use cgra::{emit_cgra_heads, emit_cgra_mlp, parse_cgra, CgraProgram};
pub use fixed::QFormat;
pub use mat::{emit_mat_kmeans, emit_mat_svm, MatProgram};

#[derive(Debug, Error, PartialEq)]
pub enum CodegenError {
    #[error("quantization overflow: {name} = {value} is outside the fixed-point range")]
    Overflow { name: String, value: f64 },
    #[error("malformed program (line {line}): {message}")]
    Malformed { line: usize, message: String },
    #[error("input has {found} values, program expects {expected}")]
    Width { expected: usize, found: usize },
    #[error("no tables")]
    NoTables,
    #[error("duplicate centroids")]
    DuplicateCentroids,
    #[error("{0}")]
    Unsupported(String),
    #[error("malformed weight blob: {0}")]
    Blob(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Cgra,
    Mat,
}

/// Emitted program plus its fixed-point parameter table and the resources
/// charged for it.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedArtifact {
    pub backend: Backend,
    pub format: QFormat,
    pub program_text: String,
    /// Raw fixed-point weights referenced by offset from the program.
    pub weights: Vec<i64>,
    pub resources: ResourceReport,
    pub perf: PerfReport,
}

impl GeneratedArtifact {
    /// Little-endian 16-bit weight table; only defined for 16-bit formats.
    pub fn weights_blob(&self) -> Result<Vec<u8>, CodegenError> {
        if self.format.int_bits + self.format.frac_bits != 16 {
            return Err(CodegenError::Blob(format!(
                "{} weights do not fit 16 bits",
                self.format
            )));
        }
        Ok(self.weights.iter().flat_map(|&w| (w as i16).to_le_bytes()).collect())
    }
}

pub fn weights_from_blob(bytes: &[u8]) -> Result<Vec<i64>, CodegenError> {
    if !bytes.len().is_multiple_of(2) {
        return Err(CodegenError::Blob(format!("odd length {}", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as i64)
        .collect())
}

/// A parsed program ready to classify rows.
#[derive(Clone, Debug, PartialEq)]
pub enum Interpreter {
    Cgra(CgraProgram),
    Mat(MatProgram),
}

impl Interpreter {
    pub fn new(program_text: &str, weights: &[i64]) -> Result<Interpreter, CodegenError> {
        let first = program_text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .find(|l| !l.is_empty())
            .unwrap_or("");
        match first {
            "program cgra v1" => Ok(Interpreter::Cgra(parse_cgra(program_text, weights)?)),
            "program mat v1" => Ok(Interpreter::Mat(MatProgram::parse(program_text)?)),
            other => Err(CodegenError::Malformed {
                line: 1,
                message: format!("unknown program header `{other}`"),
            }),
        }
    }

    pub fn from_artifact(art: &GeneratedArtifact) -> Result<Interpreter, CodegenError> {
        Interpreter::new(&art.program_text, &art.weights)
    }

    /// Class or cluster id (first head for multi-head programs).
    pub fn classify(&self, row: &[f64]) -> Result<usize, CodegenError> {
        match self {
            Interpreter::Cgra(p) => Ok(p.classify(row)?[0]),
            Interpreter::Mat(p) => p.classify(row),
        }
    }

    /// One class per task head.
    pub fn classify_heads(&self, row: &[f64]) -> Result<Vec<usize>, CodegenError> {
        match self {
            Interpreter::Cgra(p) => p.classify(row),
            Interpreter::Mat(p) => Ok(vec![p.classify(row)?]),
        }
    }
}

/// Parses the artifact's program and classifies one row.
pub fn interpret(art: &GeneratedArtifact, row: &[f64]) -> Result<usize, CodegenError> {
    Interpreter::from_artifact(art)?.classify(row)
}
