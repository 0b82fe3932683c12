pub mod cli;
pub mod corpus;
pub mod evaluator;
pub mod io;
pub mod models;
pub mod nn;
pub mod normalizer;
pub mod trainer;
