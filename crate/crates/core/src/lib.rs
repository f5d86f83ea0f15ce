pub mod grid;
pub mod linalg;
pub mod norm;
pub mod measures;
pub mod state;
pub mod objective;
pub mod solver;
pub mod targets;
pub mod certificate;
pub mod soc;
pub mod io;
pub mod config;
pub mod cli;
