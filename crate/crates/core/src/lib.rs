pub mod cli;
pub mod diagnostics;
pub mod fluid;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod model;
pub mod spectral;
pub mod stepper;
pub mod sweep;
pub mod weakform;
