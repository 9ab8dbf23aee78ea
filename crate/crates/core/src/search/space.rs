use std::fmt;

use indexmap::IndexMap;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::SearchError;
use crate::backends::{estimate, ModelShape, Target};
use crate::frontend::{Algorithm, PlatformKind, PlatformSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ParamKind {
    Real {
        lower: f64,
        upper: f64,
        log_scale: bool,
    },
    /// Inclusive bounds.
    Integer {
        lower: i64,
        upper: i64,
    },
    Ordinal {
        values: Vec<f64>,
    },
    Categorical {
        values: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl Parameter {
    pub fn real(name: &str, lower: f64, upper: f64, log_scale: bool) -> Parameter {
        Parameter {
            name: name.into(),
            kind: ParamKind::Real {
                lower,
                upper,
                log_scale,
            },
        }
    }

    pub fn integer(name: &str, lower: i64, upper: i64) -> Parameter {
        Parameter {
            name: name.into(),
            kind: ParamKind::Integer { lower, upper },
        }
    }

    pub fn ordinal(name: &str, values: &[f64]) -> Parameter {
        Parameter {
            name: name.into(),
            kind: ParamKind::Ordinal {
                values: values.to_vec(),
            },
        }
    }

    pub fn categorical(name: &str, values: &[&str]) -> Parameter {
        Parameter {
            name: name.into(),
            kind: ParamKind::Categorical {
                values: values.iter().map(|v| v.to_string()).collect(),
            },
        }
    }

    fn check(&self) -> Result<(), SearchError> {
        let bad = |why: String| Err(SearchError::Space(format!("parameter `{}`: {why}", self.name)));
        match &self.kind {
            ParamKind::Real {
                lower,
                upper,
                log_scale,
            } => {
                if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
                    return bad(format!("need finite lower < upper, got {lower}..{upper}"));
                }
                if *log_scale && *lower <= 0.0 {
                    return bad("log scale needs a positive lower bound".into());
                }
            }
            // a single-valued integer range is allowed (fixed parameter)
            ParamKind::Integer { lower, upper } if upper < lower => {
                return bad(format!("empty range {lower}..{upper}"))
            }
            ParamKind::Integer { .. } => {}
            ParamKind::Ordinal { values } => {
                if values.is_empty() {
                    return bad("no values".into());
                }
                if values.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("ordinal values must be strictly increasing".into());
                }
            }
            ParamKind::Categorical { values } => {
                if values.is_empty() {
                    return bad("no values".into());
                }
                if values.iter().enumerate().any(|(i, v)| values[..i].contains(v)) {
                    return bad("duplicate categories".into());
                }
            }
        }
        Ok(())
    }

    /// Whether the parameter splits on category subsets rather than thresholds.
    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, ParamKind::Categorical { .. })
    }

    fn sample(&self, rng: &mut crate::Rng) -> ParamValue {
        match &self.kind {
            ParamKind::Real {
                lower,
                upper,
                log_scale: false,
            } => ParamValue::Real(rng.random_range(*lower..*upper)),
            ParamKind::Real {
                lower,
                upper,
                log_scale: true,
            } => ParamValue::Real(rng.random_range(lower.ln()..upper.ln()).exp().clamp(*lower, *upper)),
            ParamKind::Integer { lower, upper } => ParamValue::Integer(rng.random_range(*lower..=*upper)),
            ParamKind::Ordinal { values } => ParamValue::Real(values[rng.random_range(0..values.len())]),
            ParamKind::Categorical { values } => ParamValue::Text(values[rng.random_range(0..values.len())].clone()),
        }
    }

    fn contains(&self, v: &ParamValue) -> bool {
        match (&self.kind, v) {
            (ParamKind::Real { lower, upper, .. }, ParamValue::Real(x)) => (*lower..=*upper).contains(x),
            (ParamKind::Integer { lower, upper }, ParamValue::Integer(x)) => (*lower..=*upper).contains(x),
            (ParamKind::Ordinal { values }, ParamValue::Real(x)) => values.contains(x),
            (ParamKind::Categorical { values }, ParamValue::Text(x)) => values.contains(x),
            _ => false,
        }
    }

    /// Numeric coordinate used by the surrogate trees: log for log-scaled
    /// reals, position for ordinals and categories.
    fn encode(&self, v: &ParamValue) -> f64 {
        match (&self.kind, v) {
            (ParamKind::Real { log_scale: true, .. }, ParamValue::Real(x)) => x.ln(),
            (ParamKind::Real { .. }, ParamValue::Real(x)) => *x,
            (ParamKind::Integer { .. }, ParamValue::Integer(x)) => *x as f64,
            (ParamKind::Ordinal { values }, ParamValue::Real(x)) => {
                values.iter().position(|v| v == x).unwrap_or(0) as f64
            }
            (ParamKind::Categorical { values }, ParamValue::Text(x)) => {
                values.iter().position(|v| v == x).unwrap_or(0) as f64
            }
            _ => f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Integer(i64),
    Real(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Integer(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Text(v) => f.write_str(v),
        }
    }
}

/// One point of a design space, keyed by parameter name in space order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub IndexMap<String, ParamValue>);

impl Configuration {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn real(&self, name: &str) -> Result<f64, SearchError> {
        match self.0.get(name) {
            Some(ParamValue::Real(v)) => Ok(*v),
            Some(ParamValue::Integer(v)) => Ok(*v as f64),
            _ => Err(SearchError::Space(format!("configuration lacks numeric `{name}`"))),
        }
    }

    pub fn integer(&self, name: &str) -> Result<i64, SearchError> {
        match self.0.get(name) {
            Some(ParamValue::Integer(v)) => Ok(*v),
            Some(ParamValue::Real(v)) if v.fract() == 0.0 => Ok(*v as i64),
            _ => Err(SearchError::Space(format!("configuration lacks integer `{name}`"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&str, SearchError> {
        match self.0.get(name) {
            Some(ParamValue::Text(v)) => Ok(v),
            _ => Err(SearchError::Space(format!("configuration lacks categorical `{name}`"))),
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(" "))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    pub params: Vec<Parameter>,
}

impl DesignSpace {
    pub fn new(params: Vec<Parameter>) -> Result<DesignSpace, SearchError> {
        for (i, p) in params.iter().enumerate() {
            p.check()?;
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(SearchError::Space(format!("duplicate parameter `{}`", p.name)));
            }
        }
        Ok(DesignSpace { params })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn contains(&self, x: &Configuration) -> bool {
        x.0.len() == self.params.len()
            && self
                .params
                .iter()
                .all(|p| x.get(&p.name).is_some_and(|v| p.contains(v)))
    }

    pub fn encode(&self, x: &Configuration) -> Vec<f64> {
        self.params
            .iter()
            .map(|p| x.get(&p.name).map_or(f64::NAN, |v| p.encode(v)))
            .collect()
    }

    pub fn sample(&self, rng: &mut crate::Rng) -> Configuration {
        Configuration(self.params.iter().map(|p| (p.name.clone(), p.sample(rng))).collect())
    }
}

/// `n` independent uniform draws (log-uniform for log-scaled reals).
pub fn sample_uniform(space: &DesignSpace, n: usize, rng: &mut crate::Rng) -> Vec<Configuration> {
    (0..n).map(|_| space.sample(rng)).collect()
}

pub const DNN_MAX_LAYERS: i64 = 10;
pub const DNN_MAX_WIDTH: i64 = 64;
pub const DNN_BATCH_SIZES: [f64; 4] = [16.0, 32.0, 64.0, 128.0];
pub const KMEANS_MAX_K: u64 = 16;
pub const SVM_EPOCHS: [f64; 3] = [10.0, 20.0, 40.0];

fn supported_on(algorithm: Algorithm, kind: PlatformKind) -> bool {
    matches!(
        (algorithm, kind),
        (Algorithm::Dnn, PlatformKind::CgraGrid) | (Algorithm::Kmeans | Algorithm::Svm, PlatformKind::MatPipeline)
    )
}

/// Tunable parameters for an algorithm, bounded by the target platform.
pub fn build_design_space(algorithm: Algorithm, platform: &PlatformSpec) -> Result<DesignSpace, SearchError> {
    if !supported_on(algorithm, platform.kind) {
        return Err(SearchError::Unsupported {
            algorithm,
            kind: platform.kind,
        });
    }
    let params = match algorithm {
        Algorithm::Dnn => vec![
            Parameter::integer("hidden_layers", 1, DNN_MAX_LAYERS),
            Parameter::integer("width", 2, DNN_MAX_WIDTH),
            Parameter::categorical("taper", &["false", "true"]),
            Parameter::categorical("activation", &["relu", "tanh"]),
            Parameter::real("learning_rate", 1e-4, 1e-1, true),
            Parameter::ordinal("batch_size", &DNN_BATCH_SIZES),
        ],
        Algorithm::Kmeans => {
            let Target::Mat(t) = Target::from_platform(platform) else {
                unreachable!("kind checked above")
            };
            let upper = KMEANS_MAX_K.min(t.num_mats) as i64;
            if upper < 2 {
                return Err(SearchError::Space(format!(
                    "k must allow at least 2 clusters, platform has {} MAT(s)",
                    t.num_mats
                )));
            }
            vec![Parameter::integer("k", 2, upper)]
        }
        Algorithm::Svm => vec![
            Parameter::real("learning_rate", 1e-3, 1.0, true),
            Parameter::real("regularization", 1e-5, 1e-1, true),
            Parameter::ordinal("epochs", &SVM_EPOCHS),
        ],
    };
    DesignSpace::new(params)
}

/// Hidden-layer widths for a dnn configuration: `width` everywhere, or
/// `max(2, width - i)` for layer `i` when tapered.
pub fn dnn_hidden_widths(x: &Configuration) -> Result<Vec<usize>, SearchError> {
    let layers = x.integer("hidden_layers")?.max(1) as usize;
    let width = x.integer("width")?.max(1) as usize;
    let taper = x.text("taper")? == "true";
    Ok((0..layers)
        .map(|i| if taper { width.saturating_sub(i).max(2) } else { width })
        .collect())
}

/// The least resource-hungry shape an algorithm can take for a dataset of
/// the given width and class count.
pub fn minimal_shape(algorithm: Algorithm, features: usize, classes: usize) -> ModelShape {
    match algorithm {
        Algorithm::Dnn => ModelShape::Mlp {
            topology: vec![features.max(1), 2, classes.max(2)],
        },
        Algorithm::Kmeans => ModelShape::Kmeans { k: 2 },
        Algorithm::Svm => ModelShape::Svm { features: 1 },
    }
}

/// Drops algorithms whose minimal configuration already violates the
/// platform's resources or performance constraints.
pub fn prune_algorithms(
    candidates: &[Algorithm],
    platform: &PlatformSpec,
    features: usize,
    classes: usize,
) -> Result<Vec<Algorithm>, SearchError> {
    let target = Target::from_platform(platform);
    let constraints = crate::backends::Constraints::from(platform);
    let kept: Vec<Algorithm> = candidates
        .iter()
        .copied()
        .filter(|&a| {
            let Ok((res, perf)) = estimate(&minimal_shape(a, features, classes), &target) else {
                return false;
            };
            crate::backends::check_feasibility(&res, &perf, &target, &constraints).is_ok_and(|v| v.feasible)
        })
        .collect();
    if kept.is_empty() {
        return Err(SearchError::NoFeasibleAlgorithm);
    }
    Ok(kept)
}
