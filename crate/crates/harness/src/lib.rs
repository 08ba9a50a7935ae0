//! Example generators, simulation and reduction sweeps for `lpvreduce`.

pub mod generate;
pub mod simulate;
pub mod sweep;
