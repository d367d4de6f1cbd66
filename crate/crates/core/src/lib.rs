//! Graph decision networks for multi-agent coordination, with the symmetry
//! tooling needed to study them: 1-WL refinement, automorphism orbits,
//! symmetry-breaking augmentations, and exact orbit-labelling constructions.

pub mod autodiff;
pub mod constructions;
pub mod envs;
pub mod gdn;
pub mod graph;
pub mod harness;
pub mod learn;
pub mod orbits;
pub mod params;
pub mod wl;
