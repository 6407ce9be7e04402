//! Arimoto α-mutual information as a privacy measure: exact measures,
//! exact channel optimization and adversarial release training.

pub mod channel_opt;
pub mod error;
pub mod experiments;
pub mod info_measures;
pub mod neural;
pub mod tensor;
pub mod training;
