pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod cost;
pub mod data;
pub mod error;
pub mod experiment;
pub mod learner;
pub mod network;
pub mod neuron;
pub mod recurrent;
pub mod tensor;
pub mod weights;
