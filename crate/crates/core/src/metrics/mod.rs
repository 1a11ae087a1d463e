//! Explanation quality metrics that compare against a reference explanation
//! or probe the model with perturbations.

pub mod groundtruth;
pub mod sensitivity;
