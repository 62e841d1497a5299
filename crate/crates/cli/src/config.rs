//! TOML experiment configs and their conversion to core types.

use std::fmt;
use std::path::{Path, PathBuf};

use block_fusion::train::{LossKind, SweepMode, SyntheticTaskSpec, TaskKind, TrainConfig};
use block_fusion::{FusionSpec, Scheme, SchemeKind};
use serde::{Deserialize, Serialize};

/// A config problem, with the position in the document when it is known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub source: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn semantic(source: &str, message: impl Into<String>) -> Self {
        Self {
            source: source.to_string(),
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{l}:{c}: {}", self.source, self.message),
            _ => write!(f, "{}: {}", self.source, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Operator description. Only the keys its scheme uses may be present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecConfig {
    pub scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dims: Option<[usize; 2]>,
    pub output_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pooled_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cascade: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sketch_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branches: Option<Vec<SpecConfig>>,
}

fn require<T: Copy>(v: Option<T>, key: &str, scheme: SchemeKind) -> Result<T, String> {
    v.ok_or_else(|| format!("scheme {scheme} requires `{key}`"))
}

impl SpecConfig {
    fn present_keys(&self) -> Vec<&'static str> {
        [
            ("core", self.core.is_some()),
            ("blocks", self.blocks.is_some()),
            ("slice_rank", self.slice_rank.is_some()),
            ("rank", self.rank.is_some()),
            ("factor_rank", self.factor_rank.is_some()),
            ("pooled_dim", self.pooled_dim.is_some()),
            ("cascade", self.cascade.is_some()),
            ("sketch_dim", self.sketch_dim.is_some()),
            ("sketch_seed", self.sketch_seed.is_some()),
            ("hidden", self.hidden.is_some()),
            ("branches", self.branches.is_some()),
        ]
        .into_iter()
        .filter_map(|(k, present)| present.then_some(k))
        .collect()
    }

    pub fn to_spec(&self) -> Result<FusionSpec, String> {
        let kind: SchemeKind = self.scheme.parse().map_err(|e: block_fusion::FusionError| e.to_string())?;
        let allowed: &[&str] = match kind {
            SchemeKind::Block => &["core", "blocks", "slice_rank"],
            SchemeKind::Tucker | SchemeKind::Mutan => &["core", "slice_rank"],
            SchemeKind::Cp => &["rank"],
            SchemeKind::Mfb => &["factor_rank", "pooled_dim"],
            SchemeKind::Mfh => &["cascade", "factor_rank", "pooled_dim"],
            SchemeKind::Mcb => &["sketch_dim", "sketch_seed"],
            SchemeKind::LinearSum | SchemeKind::ConcatMlp => &["hidden"],
            SchemeKind::Composite => &["branches"],
        };
        if let Some(extra) = self.present_keys().into_iter().find(|k| !allowed.contains(k)) {
            return Err(format!("`{extra}` does not apply to scheme {kind}"));
        }
        let k = self.output_dim;
        if kind == SchemeKind::Composite {
            let branches = self
                .branches
                .as_ref()
                .ok_or("scheme composite requires `branches`")?
                .iter()
                .enumerate()
                .map(|(b, c)| c.to_spec().map_err(|e| format!("branches[{b}]: {e}")))
                .collect::<Result<Vec<_>, _>>()?;
            let spec = FusionSpec::composite(branches, k).map_err(|e| e.to_string())?;
            if let Some(dims) = self.input_dims {
                if dims != spec.input_dims {
                    return Err(format!(
                        "input_dims {dims:?} differ from the branch total {:?}",
                        spec.input_dims
                    ));
                }
            }
            return Ok(spec);
        }
        let dims = require(self.input_dims, "input_dims", kind)?;
        let scheme = match kind {
            SchemeKind::Block => Scheme::Block {
                core: require(self.core, "core", kind)?,
                blocks: require(self.blocks, "blocks", kind)?,
                slice_rank: self.slice_rank,
            },
            SchemeKind::Tucker | SchemeKind::Mutan => Scheme::Tucker {
                core: require(self.core, "core", kind)?,
                slice_rank: match kind {
                    SchemeKind::Mutan => Some(require(self.slice_rank, "slice_rank", kind)?),
                    _ => self.slice_rank,
                },
            },
            SchemeKind::Cp => Scheme::Cp {
                rank: require(self.rank, "rank", kind)?,
            },
            SchemeKind::Mfb => Scheme::Mfb {
                factor_rank: require(self.factor_rank, "factor_rank", kind)?,
                pooled_dim: require(self.pooled_dim, "pooled_dim", kind)?,
            },
            SchemeKind::Mfh => Scheme::Mfh {
                cascade: require(self.cascade, "cascade", kind)?,
                factor_rank: require(self.factor_rank, "factor_rank", kind)?,
                pooled_dim: require(self.pooled_dim, "pooled_dim", kind)?,
            },
            SchemeKind::Mcb => Scheme::Mcb {
                sketch_dim: require(self.sketch_dim, "sketch_dim", kind)?,
                seed: self.sketch_seed.unwrap_or(0),
            },
            SchemeKind::LinearSum => Scheme::LinearSum {
                hidden: require(self.hidden, "hidden", kind)?,
            },
            SchemeKind::ConcatMlp => Scheme::ConcatMlp {
                hidden: require(self.hidden, "hidden", kind)?,
            },
            SchemeKind::Composite => unreachable!("handled above"),
        };
        FusionSpec::new(dims, k, scheme).map_err(|e| e.to_string())
    }

    pub fn from_spec(spec: &FusionSpec) -> Self {
        let mut c = SpecConfig {
            scheme: spec.kind().name().to_string(),
            input_dims: Some(spec.input_dims),
            output_dim: spec.output_dim,
            ..SpecConfig::default()
        };
        match &spec.scheme {
            Scheme::Block {
                core,
                blocks,
                slice_rank,
            } => {
                c.core = Some(*core);
                c.blocks = Some(*blocks);
                c.slice_rank = *slice_rank;
            }
            Scheme::Tucker { core, slice_rank } => {
                c.core = Some(*core);
                c.slice_rank = *slice_rank;
            }
            Scheme::Cp { rank } => c.rank = Some(*rank),
            Scheme::Mfb {
                factor_rank,
                pooled_dim,
            } => {
                c.factor_rank = Some(*factor_rank);
                c.pooled_dim = Some(*pooled_dim);
            }
            Scheme::Mfh {
                cascade,
                factor_rank,
                pooled_dim,
            } => {
                c.cascade = Some(*cascade);
                c.factor_rank = Some(*factor_rank);
                c.pooled_dim = Some(*pooled_dim);
            }
            Scheme::Mcb { sketch_dim, seed } => {
                c.sketch_dim = Some(*sketch_dim);
                c.sketch_seed = Some(*seed);
            }
            Scheme::LinearSum { hidden } | Scheme::ConcatMlp { hidden } => c.hidden = Some(*hidden),
            Scheme::Composite { branches } => {
                c.input_dims = None;
                c.branches = Some(branches.iter().map(SpecConfig::from_spec).collect());
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: String,
    /// Defaults to the `[fusion]` operator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<SpecConfig>,
    pub teacher_seed: u64,
    #[serde(default)]
    pub noise_std: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub data_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub core_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_values: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// The whole config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub fusion: SpecConfig,
    pub task: TaskConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// Core-typed view of a config.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub student: FusionSpec,
    pub task: SyntheticTaskSpec,
    pub train: TrainConfig,
}

fn position(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

pub fn parse_mode(name: &str, core_dim: Option<usize>, budget: Option<usize>) -> Result<SweepMode, String> {
    match name.replace('-', "_").as_str() {
        "fixed_core_size" => Ok(SweepMode::FixedCoreSize {
            core_dim: core_dim.ok_or("fixed_core_size needs core_dim")?,
        }),
        "fixed_param_budget" => Ok(SweepMode::FixedParamBudget {
            budget: budget.ok_or("fixed_param_budget needs budget")?,
        }),
        other => Err(format!(
            "unknown sweep mode `{other}` (expected fixed_core_size or fixed_param_budget)"
        )),
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, source: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let (line, column) = match e.span() {
                Some(span) => {
                    let (l, c) = position(text, span.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            ConfigError {
                source: source.to_string(),
                line,
                column,
                message: e.message().trim().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let source = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::semantic(&source, format!("cannot read config: {e}")))?;
        Self::parse(&text, &source)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config DTOs always serialize")
    }

    pub fn experiment(&self, source: &str) -> Result<Experiment, ConfigError> {
        let err = |m: String| ConfigError::semantic(source, m);
        let student = self.fusion.to_spec().map_err(|e| err(format!("fusion: {e}")))?;
        let teacher = match &self.task.teacher {
            Some(t) => t.to_spec().map_err(|e| err(format!("task.teacher: {e}")))?,
            None => student.clone(),
        };
        let kind = match self.task.kind.as_str() {
            "regression" => TaskKind::Regression,
            "classification" => TaskKind::Classification,
            other => {
                return Err(err(format!(
                    "task.kind: unknown task kind `{other}` (expected regression or classification)"
                )))
            }
        };
        let task = SyntheticTaskSpec {
            input_dims: student.input_dims,
            output_dim: student.output_dim,
            teacher,
            teacher_seed: self.task.teacher_seed,
            kind,
            noise_std: self.task.noise_std,
            n_train: self.task.n_train,
            n_val: self.task.n_val,
            n_test: self.task.n_test,
            data_seed: self.task.data_seed,
        };
        task.validate().map_err(|e| err(format!("task: {e}")))?;

        let d = TrainConfig::default();
        let t = &self.train;
        let loss = match &t.loss {
            Some(name) => name
                .parse::<LossKind>()
                .map_err(|e| err(format!("train.loss: {e}")))?,
            None => match kind {
                TaskKind::Regression => LossKind::Mse,
                TaskKind::Classification => LossKind::CrossEntropy,
            },
        };
        let fits = matches!(
            (loss, kind),
            (LossKind::Mse, TaskKind::Regression)
                | (LossKind::CrossEntropy | LossKind::BinaryCrossEntropy, TaskKind::Classification)
        );
        if !fits {
            return Err(err(format!(
                "train.loss: {} does not fit a {} task",
                loss.name(),
                kind.name()
            )));
        }
        let train = TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(d.learning_rate),
            batch_size: t.batch_size.unwrap_or(d.batch_size),
            beta1: t.beta1.unwrap_or(d.beta1),
            beta2: t.beta2.unwrap_or(d.beta2),
            epsilon: t.epsilon.unwrap_or(d.epsilon),
            max_epochs: t.max_epochs.unwrap_or(d.max_epochs),
            patience: t.patience.unwrap_or(d.patience),
            loss,
            seed: t.seed.unwrap_or(d.seed),
        };
        train.validate().map_err(|e| err(format!("train: {e}")))?;
        Ok(Experiment {
            student,
            task,
            train,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
output = "run.csv"

[fusion]
scheme = "block"
input_dims = [6, 5]
output_dim = 3
core = [2, 2, 2]
blocks = 2
slice_rank = 1

[task]
kind = "regression"
teacher_seed = 1
n_train = 40
n_val = 10
n_test = 10
data_seed = 2

[task.teacher]
scheme = "cp"
input_dims = [6, 5]
output_dim = 3
rank = 2

[train]
learning_rate = 0.01
patience = 3
"#;

    #[test]
    fn converts_to_core_types() {
        let cfg = ExperimentConfig::parse(SAMPLE, "sample.toml").unwrap();
        let exp = cfg.experiment("sample.toml").unwrap();
        assert_eq!(exp.student, FusionSpec::block([6, 5], 3, [2, 2, 2], 2, Some(1)).unwrap());
        assert_eq!(exp.task.teacher, FusionSpec::cp([6, 5], 3, 2).unwrap());
        assert_eq!(exp.train.learning_rate, 0.01);
        assert_eq!(exp.train.batch_size, 200);
        assert_eq!(exp.train.loss, LossKind::Mse);
    }

    #[test]
    fn serialize_parse_is_idempotent() {
        let cfg = ExperimentConfig::parse(SAMPLE, "a").unwrap();
        let again = ExperimentConfig::parse(&cfg.to_toml(), "b").unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.to_toml(), again.to_toml());
    }

    #[test]
    fn every_scheme_round_trips_through_spec_config() {
        use block_fusion::verify::Instance;
        for kind in SchemeKind::ALL {
            let spec = Instance::generate(kind, 5, 6, 4).spec;
            assert_eq!(SpecConfig::from_spec(&spec).to_spec().unwrap(), spec, "{kind}");
        }
    }

    #[test]
    fn unknown_key_has_position() {
        let text = SAMPLE.replace("blocks = 2", "blocks = 2\nbogus = 1");
        let e = ExperimentConfig::parse(&text, "x.toml").unwrap_err();
        assert_eq!(e.line, Some(10));
        assert!(e.message.contains("bogus"), "{e}");
        assert!(e.to_string().starts_with("x.toml:10:"), "{e}");
    }

    #[test]
    fn malformed_has_position() {
        let e = ExperimentConfig::parse("[fusion\nscheme = 1", "bad.toml").unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(e.column.is_some());
    }

    #[test]
    fn semantic_errors_name_the_key() {
        let cfg = ExperimentConfig::parse(&SAMPLE.replace("rank = 2", "hidden = 2"), "s").unwrap();
        let e = cfg.experiment("s").unwrap_err();
        assert!(e.message.contains("task.teacher") && e.message.contains("hidden"), "{e}");

        let cfg = ExperimentConfig::parse(&SAMPLE.replace("patience = 3", "loss = \"cross_entropy\""), "s")
            .unwrap();
        assert!(cfg.experiment("s").unwrap_err().message.contains("train.loss"));
    }

    #[test]
    fn sweep_modes() {
        assert_eq!(
            parse_mode("fixed-core-size", Some(12), None).unwrap(),
            SweepMode::FixedCoreSize { core_dim: 12 }
        );
        assert!(parse_mode("fixed_param_budget", None, None).is_err());
        assert!(parse_mode("other", None, None).is_err());
    }
}
