pub mod bridge;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod frontend;
pub mod nn;
pub mod par;
pub mod romanizer;
pub mod text;
pub mod trainer;

pub use par::Execution;
