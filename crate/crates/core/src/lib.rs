//! Editable Gaussian head avatars.
//!
//! A parametric head mesh drives UV-space position and normal maps; face
//! Gaussians are sampled from those maps, hair Gaussians come from a bounded
//! position decoder with tri-plane attributes. The merged cloud is splatted
//! into group, depth, normal and albedo buffers and shaded with band-2
//! spherical-harmonic lighting.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assets;
pub mod desk;
pub mod error;
pub mod gaussgen;
pub mod gradients;
pub mod headmodel;
pub mod math;
pub mod pipeline;
pub mod real;
pub mod shading;
pub mod splatter;
pub mod uvmaps;

pub use error::{Error, Result};
pub use real::Real;

pub type Avatar32 = pipeline::Avatar<f32>;
pub type Avatar64 = pipeline::Avatar<f64>;
pub type GaussianCloud32 = gaussgen::GaussianCloud<f32>;
pub type GaussianCloud64 = gaussgen::GaussianCloud<f64>;
pub type Camera32 = splatter::Camera<f32>;
pub type Camera64 = splatter::Camera<f64>;
pub type RenderBuffers32 = splatter::RenderBuffers<f32>;
pub type RenderBuffers64 = splatter::RenderBuffers<f64>;
pub type HeadParams32 = headmodel::HeadParams<f32>;
pub type HeadParams64 = headmodel::HeadParams<f64>;
