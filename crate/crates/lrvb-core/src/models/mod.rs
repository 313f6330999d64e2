//! Reference models: a multivariate normal exactness check plus three
//! hierarchical models (normal-Poisson GLMM, random-effects regression, and a
//! Gaussian mixture), each implementing [`crate::optimizer::ModelProblem`].

pub mod gmm;
pub mod mvn;
pub mod normal_poisson;
pub mod random_effects;
