pub mod basis;
pub mod cli;
pub mod design;
pub mod error;
pub mod estimator;
pub mod inference;
pub mod selection;
pub mod simulate;
pub mod spatial;
