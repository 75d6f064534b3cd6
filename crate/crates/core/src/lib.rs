pub mod magnetics;
pub mod swimmer;
pub mod neural;
pub mod env;
pub mod sac;
pub mod distill;
pub mod harness;
