//! Reachability analysis and controller synthesis for affine systems on polytopes.

pub mod cli;
pub mod geometry;
pub mod lp;
pub mod reach;
pub mod sim;
pub mod synth;
pub mod system;
pub mod tol;
pub mod triangulate;
