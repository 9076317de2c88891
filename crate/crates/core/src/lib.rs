//! Stacked-carton detection toolkit.
//!
//! Pure, framework-free building blocks for a small anchor-based detector: box geometry,
//! training objectives with analytic gradients, the carton label taxonomy and its
//! interchange formats, a procedural scene generator, and COCO-style evaluation.

pub mod annotations;
pub mod eval;
pub mod geometry;
pub mod losses;
pub mod synthgen;
