pub mod data;
pub mod entropy;
pub mod evaluation;
pub mod experiments;
pub mod game;
pub mod models;
pub mod numeric;
pub mod rng;
pub mod training;
