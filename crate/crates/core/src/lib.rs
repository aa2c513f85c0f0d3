//! Projective semantic mapping over a fixed triangle mesh.
pub mod components;
pub mod config;
pub mod fusion;
pub mod geometry;
pub mod interaction;
pub mod metrics;
pub mod pgm;
pub mod ply;
pub mod protocol;
pub mod rasterizer;
pub mod scenegen;
pub mod seed;
pub mod segmentation;
pub mod simulate;

/// Book chapters, compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/conventions.md")]
    pub struct Conventions;
    #[doc = include_str!("../../../book/src/rasterization.md")]
    pub struct Rasterization;
    #[doc = include_str!("../../../book/src/fusion.md")]
    pub struct Fusion;
    #[doc = include_str!("../../../book/src/components.md")]
    pub struct Components;
    #[doc = include_str!("../../../book/src/protocol.md")]
    pub struct Protocol;
    #[doc = include_str!("../../../book/src/interaction.md")]
    pub struct Interaction;
    #[doc = include_str!("../../../book/src/metrics.md")]
    pub struct Metrics;
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub struct Simulation;
}
