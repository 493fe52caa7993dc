//! Gaussian mixtures of experts with covariate-free gating (GMCF): densities, generalized
//! transportation distances, EM fitting, and numerical probes of their convergence rates.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod model;
pub mod algebra;
pub mod divergence;
pub mod experiments;
pub mod mle;
pub mod transport;

pub use error::{Error, Result};

/// Mixes a base seed with stream indices (splitmix64 finalizer) so parallel work items get
/// independent, reproducible generators.
pub(crate) fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
