//! Self-check suites: every structured operator against the brute-force
//! paths in [`crate::oracle`].
//!
//! Each instance is a pure function of `(scheme, seed)`, so a failure can be
//! replayed with [`Instance::generate`].

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::fusion::{
    core_blocks, fuse, fuse_backward, fuse_forward, init_params, reconstruct_full_tensor,
    FusionParams, FusionSpec, Gradients, Scheme, SchemeKind,
};
use crate::oracle::{
    bilinear_direct, default_rank_tol, finite_diff_grad, matrix_rank_bruteforce,
    max_relative_error, DEFAULT_FD_STEP,
};

pub const ORACLE_TOL: f64 = 1e-10;
pub const BILINEARITY_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-4;
/// Denominator floor of the gradient relative error.
pub const GRADIENT_FLOOR: f64 = 1e-3;

const PURE_BILINEAR: [SchemeKind; 6] = [
    SchemeKind::Block,
    SchemeKind::Cp,
    SchemeKind::Tucker,
    SchemeKind::Mutan,
    SchemeKind::Mfb,
    SchemeKind::Mcb,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    OracleEquivalence,
    CpCollapse,
    TuckerCollapse,
    SliceRank,
    Bilinearity,
    GradientCheck,
    ParamCount,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::OracleEquivalence,
        Suite::CpCollapse,
        Suite::TuckerCollapse,
        Suite::SliceRank,
        Suite::Bilinearity,
        Suite::GradientCheck,
        Suite::ParamCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::OracleEquivalence => "oracle-equivalence",
            Suite::CpCollapse => "cp-collapse",
            Suite::TuckerCollapse => "tucker-collapse",
            Suite::SliceRank => "slice-rank",
            Suite::Bilinearity => "bilinearity",
            Suite::GradientCheck => "gradient-check",
            Suite::ParamCount => "param-count",
        }
    }

    /// Schemes the suite exercises.
    pub fn schemes(self) -> &'static [SchemeKind] {
        match self {
            Suite::OracleEquivalence | Suite::Bilinearity => &PURE_BILINEAR,
            Suite::CpCollapse => &[SchemeKind::Block, SchemeKind::Cp],
            Suite::TuckerCollapse => &[SchemeKind::Block, SchemeKind::Tucker],
            Suite::SliceRank => &[SchemeKind::Block, SchemeKind::Mutan],
            Suite::GradientCheck | Suite::ParamCount => &SchemeKind::ALL,
        }
    }

    /// Default number of instances per scheme.
    pub fn default_instances(self) -> usize {
        match self {
            Suite::OracleEquivalence => 200,
            Suite::CpCollapse | Suite::TuckerCollapse => 100,
            Suite::SliceRank | Suite::Bilinearity => 50,
            Suite::GradientCheck => 10,
            Suite::ParamCount => 20,
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Test hook that perturbs analytic gradients before they are compared.
pub type GradientFault = fn(&FusionSpec, &mut Gradients);

#[derive(Clone, Debug, Default)]
pub struct VerifyOptions {
    /// Restrict to suites and instances involving this scheme.
    pub scheme: Option<SchemeKind>,
    pub seed: u64,
    /// Overrides every suite's instance count.
    pub instances: Option<usize>,
    pub gradient_fault: Option<GradientFault>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub scheme: SchemeKind,
    pub seed: u64,
    pub spec: FusionSpec,
    pub detail: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scheme={} seed={} spec={:?}: {}",
            self.scheme, self.seed, self.spec, self.detail
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: usize,
    pub failed: usize,
    /// Worst error seen, for suites with a tolerance.
    pub worst: f64,
    pub first_failure: Option<Failure>,
}

impl SuiteReport {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub suites: Vec<SuiteReport>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::ok)
    }

    pub fn first_failure(&self) -> Option<(Suite, &Failure)> {
        self.suites
            .iter()
            .find_map(|s| s.first_failure.as_ref().map(|f| (s.suite, f)))
    }

    pub fn suite(&self, suite: Suite) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.suite == suite)
    }
}

/// A random spec, parameters and inputs, all derived from one seed.
#[derive(Clone, Debug)]
pub struct Instance {
    pub spec: FusionSpec,
    pub params: FusionParams,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub x1b: Vec<f64>,
    pub x2b: Vec<f64>,
    pub dy: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random valid spec of `kind` with inputs up to `max_in` and output up to
/// `max_out`.
pub fn random_spec(kind: SchemeKind, rng: &mut ChaCha8Rng, max_in: usize, max_out: usize) -> FusionSpec {
    let i = rng.random_range(1..=max_in);
    let j = rng.random_range(1..=max_in);
    let k = rng.random_range(1..=max_out);
    let small = |rng: &mut ChaCha8Rng, hi: usize| rng.random_range(1..=hi);
    let scheme = match kind {
        SchemeKind::Block => {
            let core = [small(rng, 3), small(rng, 3), small(rng, 3)];
            let slice_rank = rng
                .random_bool(0.5)
                .then(|| small(rng, core[0].min(core[1])));
            Scheme::Block {
                core,
                blocks: small(rng, 3),
                slice_rank,
            }
        }
        SchemeKind::Tucker | SchemeKind::Mutan => {
            let core = [small(rng, 4), small(rng, 4), small(rng, 4)];
            let slice_rank =
                (kind == SchemeKind::Mutan).then(|| small(rng, core[0].min(core[1])));
            Scheme::Tucker { core, slice_rank }
        }
        SchemeKind::Cp => Scheme::Cp { rank: small(rng, 4) },
        SchemeKind::Mfb => Scheme::Mfb {
            factor_rank: small(rng, 3),
            pooled_dim: small(rng, 4),
        },
        SchemeKind::Mfh => Scheme::Mfh {
            cascade: small(rng, 3),
            factor_rank: small(rng, 3),
            pooled_dim: small(rng, 3),
        },
        SchemeKind::Mcb => Scheme::Mcb {
            sketch_dim: small(rng, 8),
            seed: rng.random(),
        },
        SchemeKind::LinearSum => Scheme::LinearSum { hidden: small(rng, 5) },
        SchemeKind::ConcatMlp => Scheme::ConcatMlp { hidden: small(rng, 5) },
        SchemeKind::Composite => {
            let children = [
                SchemeKind::Block,
                SchemeKind::Cp,
                SchemeKind::Mfh,
                SchemeKind::LinearSum,
                SchemeKind::Mcb,
            ];
            let n = small(rng, 3);
            let per_branch = (max_in / n).max(1);
            let branches = (0..n)
                .map(|_| {
                    let c = children[rng.random_range(0..children.len())];
                    random_spec(c, rng, per_branch, 3)
                })
                .collect();
            return FusionSpec::composite(branches, k).expect("random composite is valid");
        }
    };
    FusionSpec::new([i, j], k, scheme).expect("random spec is valid")
}

impl Instance {
    pub fn generate(kind: SchemeKind, seed: u64, max_in: usize, max_out: usize) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(kind, &mut rng, max_in, max_out);
        Self::with_spec(spec, &mut rng)
    }

    fn with_spec(spec: FusionSpec, rng: &mut ChaCha8Rng) -> Instance {
        let params = init_params(&spec, rng.random());
        let [i, j] = spec.input_dims;
        Instance {
            x1: uniform_vec(rng, i),
            x2: uniform_vec(rng, j),
            x1b: uniform_vec(rng, i),
            x2b: uniform_vec(rng, j),
            dy: uniform_vec(rng, spec.output_dim),
            alpha: rng.random_range(-2.0..2.0),
            beta: rng.random_range(-2.0..2.0),
            params,
            spec,
        }
    }
}

/// `|a - b|_∞ / (1 + |b|_∞)`.
fn normalized_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / (1.0 + scale)
}

/// Outcome of one instance: `Ok(error)` on pass, `Err(detail)` on failure.
type Check = std::result::Result<f64, String>;

fn within(err: f64, tol: f64, what: &str) -> Check {
    if err < tol {
        Ok(err)
    } else {
        Err(format!("{what} error {err:.3e} >= {tol:.0e}"))
    }
}

fn lift(r: Result<Check>) -> Check {
    r.unwrap_or_else(|e| Err(format!("operator error: {e}")))
}

fn oracle_equivalence(inst: &Instance) -> Result<Check> {
    let y = fuse(&inst.spec, &inst.params, &inst.x1, &inst.x2)?;
    let t = reconstruct_full_tensor(&inst.spec, &inst.params)?;
    let reference = bilinear_direct(&t, &inst.x1, &inst.x2)?;
    Ok(within(normalized_error(&y, &reference), ORACLE_TOL, "oracle"))
}

fn bilinearity(inst: &Instance) -> Result<Check> {
    let (a, b) = (inst.alpha, inst.beta);
    let mix = |u: &[f64], v: &[f64]| -> Vec<f64> {
        u.iter().zip(v).map(|(p, q)| a * p + b * q).collect()
    };
    let f = |x1: &[f64], x2: &[f64]| fuse(&inst.spec, &inst.params, x1, x2);
    let mut worst: f64 = 0.0;
    for first in [true, false] {
        let (lhs, y, yb) = if first {
            (
                f(&mix(&inst.x1, &inst.x1b), &inst.x2)?,
                f(&inst.x1, &inst.x2)?,
                f(&inst.x1b, &inst.x2)?,
            )
        } else {
            (
                f(&inst.x1, &mix(&inst.x2, &inst.x2b))?,
                f(&inst.x1, &inst.x2)?,
                f(&inst.x1, &inst.x2b)?,
            )
        };
        worst = worst.max(normalized_error(&lhs, &mix(&y, &yb)));
    }
    Ok(within(worst, BILINEARITY_TOL, "bilinearity"))
}

fn gradient_check(inst: &Instance, fault: Option<GradientFault>) -> Result<Check> {
    let spec = &inst.spec;
    let (_, tape) = fuse_forward(spec, &inst.params, &inst.x1, &inst.x2)?;
    let mut g = fuse_backward(spec, &inst.params, &tape, &inst.dy)?;
    if let Some(fault) = fault {
        fault(spec, &mut g);
    }
    let objective = |y: Result<Vec<f64>>| -> f64 {
        y.map(|y| y.iter().zip(&inst.dy).map(|(a, b)| a * b).sum())
            .unwrap_or(f64::NAN)
    };

    let fd_params = finite_diff_grad(
        |t| {
            let mut p = inst.params.clone();
            p.load_flat(t).expect("probe has the layout's length");
            objective(fuse(spec, &p, &inst.x1, &inst.x2))
        },
        &inst.params.flatten(),
        DEFAULT_FD_STEP,
    );
    let fd_x1 = finite_diff_grad(
        |x| objective(fuse(spec, &inst.params, x, &inst.x2)),
        &inst.x1,
        DEFAULT_FD_STEP,
    );
    let fd_x2 = finite_diff_grad(
        |x| objective(fuse(spec, &inst.params, &inst.x1, x)),
        &inst.x2,
        DEFAULT_FD_STEP,
    );
    let err = max_relative_error(&g.params.flatten(), &fd_params, GRADIENT_FLOOR)
        .max(max_relative_error(&g.dx1, &fd_x1, GRADIENT_FLOOR))
        .max(max_relative_error(&g.dx2, &fd_x2, GRADIENT_FLOOR));
    if err.is_nan() {
        return Ok(Err("non-finite gradient".into()));
    }
    Ok(within(err, GRADIENT_TOL, "gradient relative"))
}

/// Weights of a CP instance reused as a BLOCK with unit 1x1x1 cores.
fn cp_collapse(inst: &Instance) -> Result<Check> {
    let (block, block_params, cp, cp_params) = match &inst.spec.scheme {
        Scheme::Cp { rank } => {
            let block = FusionSpec::block(
                inst.spec.input_dims,
                inst.spec.output_dim,
                [1, 1, 1],
                *rank,
                None,
            )?;
            let mut flat = inst.params.flatten();
            flat.extend(std::iter::repeat_n(1.0, *rank));
            let bp = FusionParams::from_flat(&block, &flat)?;
            (block, bp, inst.spec.clone(), inst.params.clone())
        }
        Scheme::Block {
            blocks, ..
        } => {
            // same draw, forced to unit cores
            let block = FusionSpec::block(
                inst.spec.input_dims,
                inst.spec.output_dim,
                [1, 1, 1],
                *blocks,
                None,
            )?;
            let cp = FusionSpec::cp(inst.spec.input_dims, inst.spec.output_dim, *blocks)?;
            let cp_params = init_params(&cp, inst.params.fingerprint());
            let mut flat = cp_params.flatten();
            flat.extend(std::iter::repeat_n(1.0, *blocks));
            (
                block.clone(),
                FusionParams::from_flat(&block, &flat)?,
                cp,
                cp_params,
            )
        }
        _ => return Ok(Ok(0.0)),
    };
    let a = fuse(&block, &block_params, &inst.x1, &inst.x2)?;
    let b = fuse(&cp, &cp_params, &inst.x1, &inst.x2)?;
    let ta = reconstruct_full_tensor(&block, &block_params)?;
    let tb = reconstruct_full_tensor(&cp, &cp_params)?;
    Ok(if a == b && ta == tb {
        Ok(0.0)
    } else {
        Err(format!("BLOCK {a:?} != CP {b:?}"))
    })
}

/// A Tucker instance reused as a one-block BLOCK, or vice versa.
fn tucker_collapse(inst: &Instance) -> Result<Check> {
    let (core, slice_rank) = match &inst.spec.scheme {
        Scheme::Tucker { core, slice_rank } | Scheme::Block { core, slice_rank, .. } => {
            (*core, *slice_rank)
        }
        _ => return Ok(Ok(0.0)),
    };
    let [i, j] = inst.spec.input_dims;
    let k = inst.spec.output_dim;
    let block = FusionSpec::block([i, j], k, core, 1, slice_rank)?;
    let tucker = FusionSpec::tucker([i, j], k, core, slice_rank)?;
    let flat = init_params(&tucker, inst.params.fingerprint()).flatten();
    let bp = FusionParams::from_flat(&block, &flat)?;
    let tp = FusionParams::from_flat(&tucker, &flat)?;
    let a = fuse(&block, &bp, &inst.x1, &inst.x2)?;
    let b = fuse(&tucker, &tp, &inst.x1, &inst.x2)?;
    let same_tensor = reconstruct_full_tensor(&block, &bp)? == reconstruct_full_tensor(&tucker, &tp)?;
    Ok(if a == b && same_tensor {
        Ok(0.0)
    } else {
        Err(format!("BLOCK(R=1) {a:?} != Tucker {b:?}"))
    })
}

/// Slice-factored spec with `ρ = 1 + i mod 3` and `L, M >= ρ`.
fn slice_rank_spec(kind: SchemeKind, rng: &mut ChaCha8Rng, rho: usize) -> Result<FusionSpec> {
    let i = rng.random_range(1..=8);
    let j = rng.random_range(1..=8);
    let k = rng.random_range(1..=6);
    let core = [
        rng.random_range(rho..=6),
        rng.random_range(rho..=6),
        rng.random_range(1..=4),
    ];
    match kind {
        SchemeKind::Mutan => FusionSpec::tucker([i, j], k, core, Some(rho)),
        _ => FusionSpec::block([i, j], k, core, rng.random_range(1..=3), Some(rho)),
    }
}

fn slice_rank(spec: &FusionSpec, params: &FusionParams) -> Result<Check> {
    let rho = match spec.scheme {
        Scheme::Block {
            slice_rank: Some(r), ..
        }
        | Scheme::Tucker {
            slice_rank: Some(r), ..
        } => r,
        _ => return Ok(Err("spec has no slice rank".into())),
    };
    for (b, core) in core_blocks(spec, params)?.iter().enumerate() {
        let [_, _, n] = core.dims3()?;
        for s in 0..n {
            let slice = core.slice3(s)?;
            let rank = matrix_rank_bruteforce(&slice, default_rank_tol(&slice))?;
            if rank > rho {
                return Ok(Err(format!("block {b} slice {s} has rank {rank} > {rho}")));
            }
        }
    }
    Ok(Ok(0.0))
}

fn param_count(inst: &Instance) -> Check {
    let flat = inst.params.flatten().len();
    let closed = inst.spec.param_count();
    if flat == closed {
        Ok(0.0)
    } else {
        Err(format!("flat length {flat} != closed form {closed}"))
    }
}

fn instance_seed(base: u64, suite: Suite, kind: SchemeKind, i: usize) -> u64 {
    let s = Suite::ALL.iter().position(|&x| x == suite).unwrap_or(0) as u64;
    let k = SchemeKind::ALL.iter().position(|&x| x == kind).unwrap_or(0) as u64;
    // SplitMix64 finalizer over the packed coordinates
    let mut z = base
        .wrapping_add(s << 56)
        .wrapping_add(k << 48)
        .wrapping_add(i as u64)
        .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Input and output caps per suite.
fn caps(suite: Suite) -> (usize, usize) {
    match suite {
        Suite::GradientCheck => (6, 6),
        _ => (8, 6),
    }
}

/// One instance of `suite` for `kind`; the seed alone reproduces it.
pub fn run_instance(
    suite: Suite,
    kind: SchemeKind,
    seed: u64,
    fault: Option<GradientFault>,
) -> (FusionSpec, Check) {
    let (max_in, max_out) = caps(suite);
    if suite == Suite::SliceRank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = rng.random_range(1..=3);
        return match slice_rank_spec(kind, &mut rng, rho) {
            Ok(spec) => {
                let params = init_params(&spec, rng.random());
                let check = lift(slice_rank(&spec, &params));
                (spec, check)
            }
            Err(e) => (
                FusionSpec::cp([1, 1], 1, 1).expect("trivial spec"),
                Err(format!("spec error: {e}")),
            ),
        };
    }
    let inst = Instance::generate(kind, seed, max_in, max_out);
    let check = match suite {
        Suite::OracleEquivalence => lift(oracle_equivalence(&inst)),
        Suite::CpCollapse => lift(cp_collapse(&inst)),
        Suite::TuckerCollapse => lift(tucker_collapse(&inst)),
        Suite::Bilinearity => lift(bilinearity(&inst)),
        Suite::GradientCheck => lift(gradient_check(&inst, fault)),
        Suite::ParamCount => param_count(&inst),
        Suite::SliceRank => unreachable!("handled above"),
    };
    (inst.spec, check)
}

pub fn run_suite(suite: Suite, options: &VerifyOptions) -> Option<SuiteReport> {
    let kinds: Vec<SchemeKind> = suite
        .schemes()
        .iter()
        .copied()
        .filter(|k| options.scheme.is_none_or(|f| f == *k))
        .collect();
    if kinds.is_empty() {
        return None;
    }
    let n = options.instances.unwrap_or(suite.default_instances());
    let mut report = SuiteReport {
        suite,
        passed: 0,
        failed: 0,
        worst: 0.0,
        first_failure: None,
    };
    for kind in kinds {
        for i in 0..n {
            let seed = instance_seed(options.seed, suite, kind, i);
            match run_instance(suite, kind, seed, options.gradient_fault) {
                (_, Ok(err)) => {
                    report.passed += 1;
                    report.worst = report.worst.max(err);
                }
                (spec, Err(detail)) => {
                    report.failed += 1;
                    report.first_failure.get_or_insert(Failure {
                        scheme: kind,
                        seed,
                        spec,
                        detail,
                    });
                }
            }
        }
    }
    Some(report)
}

/// Runs every suite that involves the selected scheme.
pub fn run_all(options: &VerifyOptions) -> VerifyReport {
    VerifyReport {
        suites: Suite::ALL
            .iter()
            .filter_map(|&s| run_suite(s, options))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(scheme: Option<SchemeKind>) -> VerifyOptions {
        VerifyOptions {
            scheme,
            instances: Some(3),
            ..VerifyOptions::default()
        }
    }

    #[test]
    fn block_filter_runs_every_suite() {
        let report = run_all(&quick(Some(SchemeKind::Block)));
        assert_eq!(report.suites.len(), 7);
        assert!(report.all_passed(), "{:?}", report.first_failure());
    }

    #[test]
    fn non_bilinear_filter_skips_tensor_suites() {
        let report = run_all(&quick(Some(SchemeKind::ConcatMlp)));
        let names: Vec<_> = report.suites.iter().map(|s| s.suite).collect();
        assert_eq!(names, vec![Suite::GradientCheck, Suite::ParamCount]);
        assert!(report.all_passed());
    }

    fn flip_block(spec: &FusionSpec, g: &mut Gradients) {
        if spec.kind() == SchemeKind::Block {
            g.params.scale(-1.0);
        }
    }

    #[test]
    fn injected_fault_is_reported_with_seed() {
        let opts = VerifyOptions {
            gradient_fault: Some(flip_block),
            ..quick(Some(SchemeKind::Block))
        };
        let report = run_all(&opts);
        assert!(!report.all_passed());
        let (suite, failure) = report.first_failure().unwrap();
        assert_eq!(suite, Suite::GradientCheck);
        let (spec, check) =
            run_instance(Suite::GradientCheck, failure.scheme, failure.seed, Some(flip_block));
        assert_eq!(spec, failure.spec);
        assert!(check.is_err());
    }

    #[test]
    fn instances_are_reproducible() {
        let a = Instance::generate(SchemeKind::Composite, 42, 6, 6);
        let b = Instance::generate(SchemeKind::Composite, 42, 6, 6);
        assert_eq!(a.spec, b.spec);
        assert_eq!(a.params, b.params);
        assert_eq!(a.x1, b.x1);
    }
}
