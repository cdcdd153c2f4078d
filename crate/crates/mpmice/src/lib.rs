//! Coupled material-point / multi-material compressible Eulerian solver
//! for porous media at desk scale (1-D columns and 2-D plane strain),
//! with analytical benchmark scenarios and a small CLI.
//!
//! Solid and porous materials live on Lagrangian particles advanced
//! through a background grid; fluids live on the same grid as
//! cell-centered conserved quantities with an implicit pressure
//! increment. The two sides exchange momentum and energy through
//! implicit pairwise relaxation solves.

pub mod benchmarks;
pub mod error;
pub mod exchange;
pub mod grid;
pub mod ice;
pub mod materials;
pub mod math;
pub mod particles;
pub mod timestepper;

pub use error::{Result, SimError};
