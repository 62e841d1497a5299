//! Structural sweeps over the number of blocks `R` of a BLOCK student.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::task::{generate_task, Dataset, SyntheticTaskSpec};
use super::trainer::{train_model, RunRecord, TrainConfig};
use crate::error::{FusionError, Result};
use crate::fusion::{largest_cube_edge, FusionSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    /// `R·L = R·M = R·N = core_dim`, so `L = core_dim / R`.
    FixedCoreSize { core_dim: usize },
    /// Largest cube edge with `R·L³ <= budget`.
    FixedParamBudget { budget: usize },
}

impl SweepMode {
    pub fn name(self) -> &'static str {
        match self {
            SweepMode::FixedCoreSize { .. } => "fixed_core_size",
            SweepMode::FixedParamBudget { .. } => "fixed_param_budget",
        }
    }

    /// Block edge for `r`, or a config error naming `r`.
    pub fn block_edge(self, r: usize) -> Result<usize> {
        if r == 0 {
            return Err(FusionError::Config("R must be positive, got R=0".into()));
        }
        match self {
            SweepMode::FixedCoreSize { core_dim } => {
                if core_dim % r != 0 {
                    return Err(FusionError::Config(format!(
                        "R={r} does not divide core_dim={core_dim}"
                    )));
                }
                Ok(core_dim / r)
            }
            SweepMode::FixedParamBudget { budget } => match largest_cube_edge(r, budget) {
                0 => Err(FusionError::Config(format!(
                    "R={r} blocks do not fit the budget {budget}"
                ))),
                l => Ok(l),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOptions {
    pub mode: SweepMode,
    pub r_values: Vec<usize>,
    pub splits: usize,
    /// Parallel training runs; rows come back ordered by R either way.
    pub workers: usize,
    /// Reuse split 0's shuffle and init seeds for every split.
    pub share_seeds: bool,
}

impl SweepOptions {
    pub fn new(mode: SweepMode, r_values: Vec<usize>) -> Self {
        Self {
            mode,
            r_values,
            splits: 3,
            workers: 1,
            share_seeds: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_values.is_empty() {
            return Err(FusionError::Config("r_values is empty".into()));
        }
        if self.splits == 0 {
            return Err(FusionError::Config("splits must be at least 1".into()));
        }
        for &r in &self.r_values {
            self.mode.block_edge(r)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub r: usize,
    pub l: usize,
    /// Core scalars `R·L³`.
    pub param_count: usize,
    pub total_param_count: usize,
    pub metric_mean: f64,
    pub metric_std: f64,
    /// Summed wall-clock time of this row's runs.
    pub seconds: f64,
    /// Budget left unspent by the cube rounding (budget mode only).
    pub unspent: Option<usize>,
    pub runs: Vec<RunRecord>,
}

/// BLOCK student with `r` cubic blocks of edge `l` and no slice constraint.
pub fn student_spec(base: &SyntheticTaskSpec, r: usize, l: usize) -> Result<FusionSpec> {
    FusionSpec::block(base.input_dims, base.output_dim, [l, l, l], r, None)
}

/// Mean and population standard deviation (Welford, so identical values give
/// exactly zero spread).
pub fn aggregate(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (mut mean, mut m2) = (0.0, 0.0);
    for (n, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (n + 1) as f64;
        m2 += delta * (v - mean);
    }
    (mean, (m2 / values.len() as f64).sqrt())
}

fn split_seed(base: u64, split: usize) -> u64 {
    base.wrapping_add((split as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Re-partitions the pooled train+val samples; the test split stays fixed.
fn resplit(data: &Dataset, n_train: usize, seed: u64) -> Dataset {
    let mut pool: Vec<_> = data.train.iter().chain(&data.val).cloned().collect();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = pool.split_off(n_train);
    Dataset {
        train: pool,
        val,
        ..data.clone()
    }
}

/// Trains one student per R on `options.splits` random train/val splits.
pub fn sweep_blocks(
    base: &SyntheticTaskSpec,
    options: &SweepOptions,
    config: &TrainConfig,
) -> Result<Vec<SweepRow>> {
    options.validate()?;
    config.validate()?;
    let data = generate_task(base)?;
    let shapes: Vec<(usize, usize, FusionSpec)> = options
        .r_values
        .iter()
        .map(|&r| {
            let l = options.mode.block_edge(r)?;
            Ok((r, l, student_spec(base, r, l)?))
        })
        .collect::<Result<_>>()?;

    let splits: Vec<(Dataset, u64)> = (0..options.splits)
        .map(|s| {
            let s = if options.share_seeds { 0 } else { s };
            let ds = resplit(&data, base.n_train, split_seed(base.data_seed ^ 0xA5A5, s));
            (ds, split_seed(config.seed, s))
        })
        .collect();

    let jobs: Vec<(usize, usize)> = (0..shapes.len())
        .flat_map(|row| (0..options.splits).map(move |s| (row, s)))
        .collect();
    let results: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let run_jobs = || loop {
        let idx = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(row, s)) = jobs.get(idx) else { break };
        let (ds, seed) = &splits[s];
        let cfg = TrainConfig {
            seed: *seed,
            ..config.clone()
        };
        let out = train_model(&shapes[row].2, ds, &cfg);
        results.lock().expect("sweep result lock")[idx] = Some(out);
    };
    let workers = options.workers.clamp(1, jobs.len());
    if workers == 1 {
        run_jobs();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(run_jobs);
            }
        });
    }

    let mut results = results.into_inner().expect("sweep result lock").into_iter();
    shapes
        .into_iter()
        .map(|(r, l, spec)| {
            let runs: Vec<RunRecord> = results
                .by_ref()
                .take(options.splits)
                .map(|o| o.expect("every job ran"))
                .collect::<Result<_>>()?;
            let metrics: Vec<f64> = runs.iter().map(|run| run.test_metric).collect();
            let (metric_mean, metric_std) = aggregate(&metrics);
            let param_count = spec.core_param_count();
            Ok(SweepRow {
                r,
                l,
                param_count,
                total_param_count: spec.param_count(),
                metric_mean,
                metric_std,
                seconds: runs.iter().map(|run| run.seconds).sum(),
                unspent: match options.mode {
                    SweepMode::FixedParamBudget { budget } => Some(budget - param_count),
                    SweepMode::FixedCoreSize { .. } => None,
                },
                runs,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::task::TaskKind;

    fn base() -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            input_dims: [4, 4],
            output_dim: 2,
            teacher: FusionSpec::block([4, 4], 2, [2, 2, 2], 2, None).unwrap(),
            teacher_seed: 5,
            kind: TaskKind::Regression,
            noise_std: 0.0,
            n_train: 30,
            n_val: 10,
            n_test: 10,
            data_seed: 6,
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-2,
            batch_size: 10,
            max_epochs: 3,
            patience: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn core_counts_follow_the_schedule() {
        let opts = SweepOptions {
            splits: 1,
            ..SweepOptions::new(SweepMode::FixedCoreSize { core_dim: 12 }, vec![1, 2, 3, 4, 6, 12])
        };
        let rows = sweep_blocks(&base(), &opts, &TrainConfig { max_epochs: 1, ..quick() }).unwrap();
        let counts: Vec<usize> = rows.iter().map(|r| r.param_count).collect();
        assert_eq!(counts, vec![1728, 432, 192, 108, 48, 12]);
        assert!(rows.iter().all(|r| r.metric_std == 0.0 && r.runs.len() == 1));
    }

    #[test]
    fn budget_mode_edges() {
        let mode = SweepMode::FixedParamBudget { budget: 555_000 };
        assert_eq!(mode.block_edge(20).unwrap(), 30);
        assert_eq!(mode.block_edge(1).unwrap(), 82);
    }

    #[test]
    fn validation_names_the_offender() {
        let mode = SweepMode::FixedCoreSize { core_dim: 12 };
        let err = SweepOptions::new(mode, vec![1, 5]).validate().unwrap_err();
        assert!(err.to_string().contains("R=5"), "{err}");
        assert!(matches!(
            SweepOptions::new(mode, vec![]).validate(),
            Err(FusionError::Config(_))
        ));
    }

    #[test]
    fn shared_seeds_give_zero_std() {
        let opts = SweepOptions {
            share_seeds: true,
            ..SweepOptions::new(SweepMode::FixedCoreSize { core_dim: 4 }, vec![2])
        };
        let rows = sweep_blocks(&base(), &opts, &quick()).unwrap();
        assert_eq!(rows[0].metric_std, 0.0);
        assert_eq!(rows[0].runs.len(), 3);
    }

    #[test]
    fn single_r_matches_independent_runs() {
        let opts = SweepOptions::new(SweepMode::FixedCoreSize { core_dim: 4 }, vec![2]);
        let rows = sweep_blocks(&base(), &opts, &quick()).unwrap();
        let data = generate_task(&base()).unwrap();
        let spec = student_spec(&base(), 2, 2).unwrap();
        for (s, run) in rows[0].runs.iter().enumerate() {
            let ds = resplit(&data, 30, split_seed(base().data_seed ^ 0xA5A5, s));
            let cfg = TrainConfig { seed: split_seed(0, s), ..quick() };
            let solo = train_model(&spec, &ds, &cfg).unwrap();
            assert_eq!(solo.without_timing(), run.without_timing());
        }
    }

    #[test]
    fn workers_do_not_change_results() {
        let mode = SweepMode::FixedCoreSize { core_dim: 4 };
        let serial = sweep_blocks(&base(), &SweepOptions::new(mode, vec![1, 2, 4]), &quick()).unwrap();
        let parallel = sweep_blocks(
            &base(),
            &SweepOptions { workers: 4, ..SweepOptions::new(mode, vec![1, 2, 4]) },
            &quick(),
        )
        .unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.metric_mean, b.metric_mean);
            assert_eq!(a.r, b.r);
        }
    }

    #[test]
    fn aggregate_population_std() {
        assert_eq!(aggregate(&[2.0, 4.0]), (3.0, 1.0));
        assert_eq!(aggregate(&[1.5]), (1.5, 0.0));
        assert_eq!(aggregate(&[0.1; 3]), (0.1, 0.0));
    }
}
