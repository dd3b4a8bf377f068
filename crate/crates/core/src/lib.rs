pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradsuite;
pub mod nets;
pub mod rng;
pub mod smooth;
pub mod tensor;
pub mod train;
