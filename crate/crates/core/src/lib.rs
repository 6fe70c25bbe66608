pub mod augment;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod evaluator;
pub mod io;
pub mod lexical;
pub mod rng;
pub mod synthetic;
pub mod tqgen;
pub mod trainer;
