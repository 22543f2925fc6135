//! Affordance-segmentation dataset tooling: JSON Lines manifests, RLE mask
//! operations, gIoU/cIoU evaluation, depth backprojection, geometric grasp
//! proposal, the annotation tool cascade, and instruction generation.

pub mod annotate;
pub mod cli;
pub mod graspgen;
pub mod instructions;
pub mod manifest;
pub mod maskops;
pub mod metrics;
pub mod predict;
pub mod projection;
