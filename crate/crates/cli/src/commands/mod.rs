pub mod dataset;
pub mod evaluate;
pub mod forecast;
pub mod report;
pub mod simulate;
pub mod train;
pub mod uq;
