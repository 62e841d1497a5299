use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FusionError, Result};
use crate::fusion::{fuse, init_params, FusionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskKind {
    Regression,
    Classification,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Regression => "regression",
            TaskKind::Classification => "classification",
        }
    }
}

/// A synthetic multimodal task whose targets come from a fixed teacher operator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTaskSpec {
    pub input_dims: [usize; 2],
    pub output_dim: usize,
    pub teacher: FusionSpec,
    pub teacher_seed: u64,
    pub kind: TaskKind,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub data_seed: u64,
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        if self.teacher.input_dims != self.input_dims || self.teacher.output_dim != self.output_dim
        {
            return Err(FusionError::Config(format!(
                "teacher maps {:?} -> {} but the task is {:?} -> {}",
                self.teacher.input_dims, self.teacher.output_dim, self.input_dims, self.output_dim
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(FusionError::Config(format!(
                "noise_std must be finite and >= 0, got {}",
                self.noise_std
            )));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(FusionError::Config("every split needs at least one sample".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Values(Vec<f64>),
    Class(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: TaskKind,
    pub input_dims: [usize; 2],
    pub output_dim: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}

/// Draws standard-normal inputs and teacher targets (plus Gaussian noise).
/// Splits are consecutive draws from one stream, so they never share samples.
pub fn generate_task(spec: &SyntheticTaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let teacher = init_params(&spec.teacher, spec.teacher_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.data_seed);
    let [i, j] = spec.input_dims;
    let k = spec.output_dim;

    let mut draw = |n: usize| -> Result<Vec<Sample>> {
        (0..n)
            .map(|_| {
                let x1: Vec<f64> = (0..i).map(|_| StandardNormal.sample(&mut rng)).collect();
                let x2: Vec<f64> = (0..j).map(|_| StandardNormal.sample(&mut rng)).collect();
                let noise: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                let mut y = fuse(&spec.teacher, &teacher, &x1, &x2)?;
                if spec.noise_std > 0.0 {
                    y.iter_mut()
                        .zip(&noise)
                        .for_each(|(v, e)| *v += spec.noise_std * e);
                }
                let target = match spec.kind {
                    TaskKind::Regression => Target::Values(y),
                    TaskKind::Classification => Target::Class(argmax(&y)),
                };
                Ok(Sample { x1, x2, target })
            })
            .collect()
    };
    let train = draw(spec.n_train)?;
    let val = draw(spec.n_val)?;
    let test = draw(spec.n_test)?;
    Ok(Dataset {
        kind: spec.kind,
        input_dims: spec.input_dims,
        output_dim: k,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind, noise_std: f64) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            input_dims: [5, 4],
            output_dim: 3,
            teacher: FusionSpec::block([5, 4], 3, [2, 2, 2], 2, None).unwrap(),
            teacher_seed: 11,
            kind,
            noise_std,
            n_train: 20,
            n_val: 5,
            n_test: 5,
            data_seed: 3,
        }
    }

    #[test]
    fn noiseless_targets_equal_teacher() {
        let s = spec(TaskKind::Regression, 0.0);
        let data = generate_task(&s).unwrap();
        let teacher = init_params(&s.teacher, s.teacher_seed);
        for sample in data.train.iter().chain(&data.val).chain(&data.test) {
            let y = fuse(&s.teacher, &teacher, &sample.x1, &sample.x2).unwrap();
            assert_eq!(sample.target, Target::Values(y));
        }
    }

    #[test]
    fn regeneration_is_identical() {
        let s = spec(TaskKind::Regression, 0.1);
        assert_eq!(generate_task(&s).unwrap(), generate_task(&s).unwrap());
        let mut other = s.clone();
        other.data_seed += 1;
        assert_ne!(generate_task(&s).unwrap(), generate_task(&other).unwrap());
    }

    #[test]
    fn classification_targets_are_teacher_argmax() {
        let s = spec(TaskKind::Classification, 0.0);
        let data = generate_task(&s).unwrap();
        let teacher = init_params(&s.teacher, s.teacher_seed);
        for sample in &data.train {
            let y = fuse(&s.teacher, &teacher, &sample.x1, &sample.x2).unwrap();
            assert_eq!(sample.target, Target::Class(argmax(&y)));
        }
    }

    #[test]
    fn no_class_dominates() {
        let mut s = spec(TaskKind::Classification, 0.0);
        s.n_train = 10_000;
        let data = generate_task(&s).unwrap();
        let mut counts = [0usize; 3];
        for sample in &data.train {
            if let Target::Class(c) = sample.target {
                counts[c] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!(freq > 0.1 && freq < 0.9, "{counts:?}");
        }
    }

    #[test]
    fn mismatched_teacher_rejected() {
        let mut s = spec(TaskKind::Regression, 0.0);
        s.output_dim = 4;
        assert!(generate_task(&s).is_err());
        let mut s = spec(TaskKind::Regression, -1.0);
        s.output_dim = 3;
        assert!(generate_task(&s).is_err());
    }
}
