//! Concrete games: a synthetic quadratic game with an analytic equilibrium
//! oracle, a stochastic production-and-distribution market over a transport
//! network, and a two-stage multi-product assembly game.

pub mod assembly;
pub mod cournot;
pub mod quadratic;

pub use assembly::{build_paper_assembly, recourse_value_and_subgradient, AssemblyGame};
pub use cournot::{build_paper_cournot, synthetic_transport_network, CournotGame};
pub use quadratic::{quadratic_nash_oracle, QuadraticGame};
