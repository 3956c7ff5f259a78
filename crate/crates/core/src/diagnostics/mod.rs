//! Training-dynamics instrumentation, empirical SQNR, and the reference oracles used in tests.

mod dynamics;
mod grid;
mod sqnr;
pub mod surrogate;

pub use dynamics::{
    record_dynamics, write_gnuplot_script, DynamicsLog, DynamicsRecord, CSV_HEADER,
};
pub use grid::{grid_search_step, Grid, GridObjective};
pub use sqnr::empirical_sqnr;
pub use surrogate::{Branch, SteSurrogate, DEGENERATE_TOL};
