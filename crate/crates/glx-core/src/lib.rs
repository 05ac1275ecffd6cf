//! Boundary value problems coupled along graphs, at finite dimension.
//!
//! The crate builds weighted spaces and operators ([`space`]), finite
//! oriented graphs with subdivision/line-graph constructions ([`graph`]),
//! abstract boundary value problems with their Neumann, Dirichlet, solution
//! and Dirichlet-to-Neumann operators ([`abvp`]), vertex/edge couplings of
//! such problems ([`coupling`]), vector-valued quantum graph spectra
//! ([`qgraph`]) and quantitative quasi-isomorphy distances ([`quasiiso`]).
//! Every identity used is re-checked by independent brute-force oracles in
//! [`verify`].

pub mod abvp;
pub mod coupling;
pub mod fixtures;
pub mod graph;
pub mod io;
pub mod qgraph;
pub mod quasiiso;
pub mod space;
pub mod testutil;
pub mod verify;

pub use space::{C64, GramForm, LinOp, SpaceError, WeightedSpace};
