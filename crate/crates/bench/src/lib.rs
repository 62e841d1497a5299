//! Fixtures shared by the criterion benches.

use block_fusion::fusion::init_params;
use block_fusion::{FusionParams, FusionSpec, Scheme};

/// A VQA-like operator with its parameters and a fixed input pair.
pub struct Fixture {
    pub name: &'static str,
    pub spec: FusionSpec,
    pub params: FusionParams,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

fn inputs(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|t| ((t as f64) * 0.61 + phase).sin()).collect()
}

/// One fixture per bilinear family at `I = J = dim`, `K = out`.
pub fn fixtures(dim: usize, out: usize) -> Vec<Fixture> {
    let schemes: [(&'static str, Scheme); 6] = [
        ("block", Scheme::Block { core: [8, 8, 8], blocks: 4, slice_rank: None }),
        ("block_rank2", Scheme::Block { core: [8, 8, 8], blocks: 4, slice_rank: Some(2) }),
        ("tucker", Scheme::Tucker { core: [16, 16, 16], slice_rank: None }),
        ("cp", Scheme::Cp { rank: 64 }),
        ("mfb", Scheme::Mfb { factor_rank: 4, pooled_dim: 16 }),
        ("mcb", Scheme::Mcb { sketch_dim: 256, seed: 1 }),
    ];
    schemes
        .into_iter()
        .map(|(name, scheme)| {
            let spec = FusionSpec::new([dim, dim], out, scheme).expect("fixture spec");
            Fixture {
                name,
                params: init_params(&spec, 7),
                x1: inputs(dim, 0.0),
                x2: inputs(dim, 1.0),
                spec,
            }
        })
        .collect()
}
