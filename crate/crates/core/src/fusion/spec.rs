use std::fmt;
use std::str::FromStr;

use crate::error::{FusionError, Result};

/// Architecture of one fusion operator: input dims `(I, J)`, output dim `K`
/// and the scheme-specific hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionSpec {
    pub input_dims: [usize; 2],
    pub output_dim: usize,
    pub scheme: Scheme,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Scheme {
    /// `y = W (P1^T x1 + P2^T x2)` with a hidden dim `d`.
    LinearSum { hidden: usize },
    /// Three affine layers with ReLU on `[x1; x2]`.
    ConcatMlp { hidden: usize },
    /// Count-sketch bilinear pooling followed by a `K x d` projection.
    Mcb { sketch_dim: usize, seed: u64 },
    /// Tucker core `L x M x N`; with a slice rank this is MUTAN.
    Tucker {
        core: [usize; 3],
        slice_rank: Option<usize>,
    },
    /// Rank-`R` CP decomposition (MLB).
    Cp { rank: usize },
    /// Low-rank factorized bilinear pooling with `o` outputs of rank `k`.
    Mfb { factor_rank: usize, pooled_dim: usize },
    /// `Q` cascaded MFB blocks.
    Mfh {
        cascade: usize,
        factor_rank: usize,
        pooled_dim: usize,
    },
    /// Block-term decomposition: `R` blocks of size `L x M x N`.
    Block {
        core: [usize; 3],
        blocks: usize,
        slice_rank: Option<usize>,
    },
    /// Concatenation of per-branch fusions followed by a linear map to `K`.
    Composite { branches: Vec<FusionSpec> },
}

/// Flat scheme tag, distinguishing MUTAN from plain Tucker.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchemeKind {
    LinearSum,
    ConcatMlp,
    Mcb,
    Tucker,
    Cp,
    Mfb,
    Mutan,
    Mfh,
    Block,
    Composite,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 10] = [
        SchemeKind::LinearSum,
        SchemeKind::ConcatMlp,
        SchemeKind::Mcb,
        SchemeKind::Tucker,
        SchemeKind::Cp,
        SchemeKind::Mfb,
        SchemeKind::Mutan,
        SchemeKind::Mfh,
        SchemeKind::Block,
        SchemeKind::Composite,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::LinearSum => "linear_sum",
            SchemeKind::ConcatMlp => "concat_mlp",
            SchemeKind::Mcb => "mcb",
            SchemeKind::Tucker => "tucker",
            SchemeKind::Cp => "cp",
            SchemeKind::Mfb => "mfb",
            SchemeKind::Mutan => "mutan",
            SchemeKind::Mfh => "mfh",
            SchemeKind::Block => "block",
            SchemeKind::Composite => "composite",
        }
    }

    /// Schemes whose output is exactly `T x_1 x1 x_2 x2` for some tensor `T`.
    pub fn is_bilinear(self) -> bool {
        matches!(
            self,
            SchemeKind::Mcb
                | SchemeKind::Tucker
                | SchemeKind::Cp
                | SchemeKind::Mfb
                | SchemeKind::Mutan
                | SchemeKind::Block
        )
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "mlb" => "cp",
            "sum" | "linear" => "linear_sum",
            "mlp" | "concat" => "concat_mlp",
            other => other,
        };
        SchemeKind::ALL
            .into_iter()
            .find(|k| k.name() == alias)
            .ok_or_else(|| FusionError::InvalidSpec(format!("unknown scheme `{s}`")))
    }
}

impl FusionSpec {
    pub fn new(input_dims: [usize; 2], output_dim: usize, scheme: Scheme) -> Result<Self> {
        let spec = Self {
            input_dims,
            output_dim,
            scheme,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn block(
        input_dims: [usize; 2],
        output_dim: usize,
        core: [usize; 3],
        blocks: usize,
        slice_rank: Option<usize>,
    ) -> Result<Self> {
        Self::new(
            input_dims,
            output_dim,
            Scheme::Block {
                core,
                blocks,
                slice_rank,
            },
        )
    }

    pub fn tucker(
        input_dims: [usize; 2],
        output_dim: usize,
        core: [usize; 3],
        slice_rank: Option<usize>,
    ) -> Result<Self> {
        Self::new(input_dims, output_dim, Scheme::Tucker { core, slice_rank })
    }

    pub fn cp(input_dims: [usize; 2], output_dim: usize, rank: usize) -> Result<Self> {
        Self::new(input_dims, output_dim, Scheme::Cp { rank })
    }

    /// Composite whose input dims are the concatenation of the branch inputs.
    pub fn composite(branches: Vec<FusionSpec>, output_dim: usize) -> Result<Self> {
        let i = branches.iter().map(|b| b.input_dims[0]).sum();
        let j = branches.iter().map(|b| b.input_dims[1]).sum();
        Self::new([i, j], output_dim, Scheme::Composite { branches })
    }

    pub fn kind(&self) -> SchemeKind {
        match &self.scheme {
            Scheme::LinearSum { .. } => SchemeKind::LinearSum,
            Scheme::ConcatMlp { .. } => SchemeKind::ConcatMlp,
            Scheme::Mcb { .. } => SchemeKind::Mcb,
            Scheme::Tucker {
                slice_rank: Some(_),
                ..
            } => SchemeKind::Mutan,
            Scheme::Tucker { .. } => SchemeKind::Tucker,
            Scheme::Cp { .. } => SchemeKind::Cp,
            Scheme::Mfb { .. } => SchemeKind::Mfb,
            Scheme::Mfh { .. } => SchemeKind::Mfh,
            Scheme::Block { .. } => SchemeKind::Block,
            Scheme::Composite { .. } => SchemeKind::Composite,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [i, j] = self.input_dims;
        positive("input dim I", i)?;
        positive("input dim J", j)?;
        positive("output dim K", self.output_dim)?;
        match &self.scheme {
            Scheme::LinearSum { hidden } | Scheme::ConcatMlp { hidden } => {
                positive("hidden", *hidden)
            }
            Scheme::Mcb { sketch_dim, .. } => positive("sketch_dim", *sketch_dim),
            Scheme::Cp { rank } => positive("rank", *rank),
            Scheme::Mfb {
                factor_rank,
                pooled_dim,
            } => {
                positive("factor_rank", *factor_rank)?;
                positive("pooled_dim", *pooled_dim)
            }
            Scheme::Mfh {
                cascade,
                factor_rank,
                pooled_dim,
            } => {
                positive("cascade", *cascade)?;
                positive("factor_rank", *factor_rank)?;
                positive("pooled_dim", *pooled_dim)
            }
            Scheme::Tucker { core, slice_rank } => check_core(*core, *slice_rank),
            Scheme::Block {
                core,
                blocks,
                slice_rank,
            } => {
                positive("blocks", *blocks)?;
                check_core(*core, *slice_rank)
            }
            Scheme::Composite { branches } => {
                if branches.is_empty() {
                    return Err(FusionError::InvalidSpec("composite without branches".into()));
                }
                for b in branches {
                    b.validate()?;
                }
                let bi: usize = branches.iter().map(|b| b.input_dims[0]).sum();
                let bj: usize = branches.iter().map(|b| b.input_dims[1]).sum();
                if [bi, bj] != self.input_dims {
                    return Err(FusionError::InvalidSpec(format!(
                        "composite input dims {:?} do not match branch totals [{bi}, {bj}]",
                        self.input_dims
                    )));
                }
                Ok(())
            }
        }
    }

    /// Closed-form number of learned scalars.
    pub fn param_count(&self) -> usize {
        let [i, j] = self.input_dims;
        let k = self.output_dim;
        match &self.scheme {
            Scheme::Block {
                core: [l, m, n],
                blocks: r,
                ..
            } => i * l * r + j * m * r + k * n * r + self.core_param_count(),
            Scheme::Cp { rank } => rank * (i + j + k),
            Scheme::Tucker { core: [l, m, n], .. } => {
                i * l + j * m + k * n + self.core_param_count()
            }
            Scheme::Mcb { sketch_dim, .. } => sketch_dim * k,
            Scheme::LinearSum { hidden: d } => i * d + j * d + d * k,
            Scheme::ConcatMlp { hidden: h } => (i + j + 1) * h + (h + 1) * h + (h + 1) * k,
            Scheme::Mfb {
                factor_rank,
                pooled_dim,
            } => (i + j) * factor_rank * pooled_dim + pooled_dim * k,
            Scheme::Mfh {
                cascade,
                factor_rank,
                pooled_dim,
            } => cascade * (i + j) * factor_rank * pooled_dim + cascade * pooled_dim * k,
            Scheme::Composite { branches } => {
                let children: usize = branches.iter().map(FusionSpec::param_count).sum();
                let concat: usize = branches.iter().map(|b| b.output_dim).sum();
                children + concat * k
            }
        }
    }

    /// Learned scalars in the core tensor(s) of Tucker/MUTAN/BLOCK, zero otherwise.
    pub fn core_param_count(&self) -> usize {
        match &self.scheme {
            Scheme::Block {
                core: [l, m, n],
                blocks: r,
                slice_rank,
            } => match slice_rank {
                None => r * l * m * n,
                Some(rho) => r * rho * n * (l + m),
            },
            Scheme::Tucker {
                core: [l, m, n],
                slice_rank,
            } => match slice_rank {
                None => l * m * n,
                Some(rho) => rho * n * (l + m),
            },
            _ => 0,
        }
    }
}

fn positive(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(FusionError::InvalidSpec(format!("{what} must be positive")));
    }
    Ok(())
}

fn check_core(core: [usize; 3], slice_rank: Option<usize>) -> Result<()> {
    positive("core L", core[0])?;
    positive("core M", core[1])?;
    positive("core N", core[2])?;
    if let Some(rho) = slice_rank {
        positive("slice_rank", rho)?;
        if rho > core[0].min(core[1]) {
            return Err(FusionError::InvalidSpec(format!(
                "slice_rank {rho} exceeds min(L, M) = {}",
                core[0].min(core[1])
            )));
        }
    }
    Ok(())
}

/// Largest cube block edge `L` with `R L^3 <= budget`.
pub fn largest_cube_edge(blocks: usize, budget: usize) -> usize {
    if blocks == 0 {
        return 0;
    }
    let per_block = budget / blocks;
    let mut l = (per_block as f64).cbrt().floor() as usize;
    while (l + 1).pow(3) <= per_block {
        l += 1;
    }
    while l > 0 && l.pow(3) > per_block {
        l -= 1;
    }
    l
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tucker_core_is_500_cubed() {
        let spec = FusionSpec::tucker([1, 1], 1, [500, 500, 500], None).unwrap();
        assert_eq!(spec.core_param_count(), 125_000_000);
    }

    #[test]
    fn fixed_core_schedule() {
        for r in [1usize, 2, 4, 5, 10, 20, 50, 100, 250, 500] {
            let l = 500 / r;
            let spec = FusionSpec::block([1, 1], 1, [l, l, l], r, None).unwrap();
            assert_eq!(spec.core_param_count(), 125_000_000 / (r * r), "R={r}");
        }
    }

    #[test]
    fn vqa_block_core_with_slice_rank() {
        let spec = FusionSpec::block([1, 1], 1, [80, 80, 80], 20, Some(10)).unwrap();
        assert_eq!(spec.core_param_count(), 2_560_000);
    }

    #[test]
    fn closed_forms() {
        let block = FusionSpec::block([4, 4], 3, [2, 2, 2], 2, None).unwrap();
        assert_eq!(block.param_count(), 60);
        let cp = FusionSpec::cp([10, 10], 10, 5).unwrap();
        assert_eq!(cp.param_count(), 150);
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(largest_cube_edge(20, 555_000), 30);
        assert!(20 * 30usize.pow(3) <= 555_000 && 20 * 31usize.pow(3) > 555_000);
        assert_eq!(largest_cube_edge(1, 125), 5);
        assert_eq!(largest_cube_edge(1, 124), 4);
        assert_eq!(largest_cube_edge(3, 2), 0);
    }

    #[test]
    fn slice_rank_bounded_by_core() {
        assert!(FusionSpec::block([2, 2], 2, [3, 2, 4], 1, Some(3)).is_err());
        assert!(FusionSpec::block([2, 2], 2, [3, 2, 4], 1, Some(2)).is_ok());
        assert!(FusionSpec::tucker([2, 2], 2, [3, 3, 3], Some(0)).is_err());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(FusionSpec::cp([0, 2], 2, 1).is_err());
        assert!(FusionSpec::cp([2, 2], 2, 0).is_err());
        assert!(FusionSpec::composite(vec![], 2).is_err());
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("BLOCK".parse::<SchemeKind>().unwrap(), SchemeKind::Block);
        assert_eq!("concat-mlp".parse::<SchemeKind>().unwrap(), SchemeKind::ConcatMlp);
        assert_eq!("mlb".parse::<SchemeKind>().unwrap(), SchemeKind::Cp);
        assert!("nosuch".parse::<SchemeKind>().is_err());
        let mutan = FusionSpec::tucker([2, 2], 2, [2, 2, 2], Some(1)).unwrap();
        assert_eq!(mutan.kind(), SchemeKind::Mutan);
    }
}
