pub mod autodiff;
pub mod cli;
pub mod encode;
pub mod eval;
pub mod model;
pub mod seeds;
pub mod train;
pub mod world;
