pub mod contention;
pub mod energy;
pub mod error;
pub mod freq;
pub mod ift;
pub mod io;
pub mod optimizer;
pub mod sim;
