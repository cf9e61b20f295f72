//! Synthetic phantoms and dataset synthesis.

mod dataset;
mod phantom;

pub use dataset::*;
pub use phantom::{
    boundary_mask, gaussian_blur, make_phantom, make_variant, random_spec, Phantom, PhantomSpec,
    EDGE_SIGMA_PX,
};
