//! The bilinear fusion operators: BLOCK and the schemes it generalizes
//! (CP/MLB, Tucker, MUTAN, MFB, MFH, MCB) plus the linear and MLP baselines
//! and the concat-of-fusions composite.

mod block_term;
mod cascade;
mod ops;
mod params;
mod spec;

pub use ops::{
    composite_fuse, core_blocks, fuse, fuse_backward, fuse_backward_into, fuse_forward,
    mcb_plans, param_breakdown, reconstruct_full_tensor, reconstruct_via_superdiag, Gradients,
    Tape,
};
pub use params::{init_params, layout, FusionParams, ParamEntry, Slot};
pub use spec::{largest_cube_edge, FusionSpec, Scheme, SchemeKind};
