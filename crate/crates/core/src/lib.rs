//! Numerical toolkit for stochastic porous-media equations
//! `dX − ΔΨ(X) dt = B(X) dW` driven by maximal monotone graphs.

pub mod banded;
pub mod graph;
pub mod noise;
pub mod quadrature;
pub mod solver;
pub mod spatial;
pub mod verifier;

pub use graph::{GraphError, GraphSpec, MonotoneGraph, Regularization};
pub use noise::{HsTarget, NoiseError, NoiseKind, NoiseOperator, NoiseSpec, WienerPath};
pub use spatial::{Field, Grid, OperatorError, SpatialOperator};
