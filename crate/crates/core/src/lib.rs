//! Quadtree partition-based image coding and semantic transmission.
//!
//! Two pipelines share one latent representation and one coding schedule:
//!
//! * the LIC path quantizes a block-transform latent against a causal
//!   Gaussian entropy model and range-codes it into a bitstream;
//! * the DeepSC path maps each spatial unit to a variable number of analog
//!   complex symbols, sized by the same entropy model, and sends them through
//!   a simulated fading channel with zero-forcing equalization.
//!
//! Every random draw comes from [`rng::seeded_stream`], so a configuration plus
//! a seed determines every output byte.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod config;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod gauss;
pub mod image;
pub mod latent;
pub mod lic;
pub mod metrics;
pub mod pipeline;
pub mod quadtree;
pub mod rangecoder;
pub mod rng;
pub mod sideinfo;
pub mod symbolizer;
pub mod transform;

pub use config::{derive_latent_dims, validate_config, ContextParams, SystemConfig};
pub use error::{Error, Result};
pub use image::ImagePlane;
pub use latent::{Coord, LatentGrid};
