//! Semantic Gaussian-splatting SLAM with compact hierarchical label codes.
//!
//! Every Gaussian in the map carries a concatenated per-level embedding whose
//! layout is fixed by a [`taxonomy::SemanticTree`]. The [`slam`] loop
//! alternates pose tracking and map optimization over RGB-D frames with
//! semantic labels; [`eval`] scores the result.

pub mod eval;
pub mod io;
pub mod losses;
pub mod renderer;
pub mod scene;
pub mod slam;
pub mod taxonomy;
