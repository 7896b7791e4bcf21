//! Analogous disentangled actor-critic: a tape autodiff engine, MLP
//! policies and critics, classic-control environments, amortized SVGD,
//! the DDPG/TD3 agent family with disentangled behavior and target
//! policies, and an exact tabular checker for the critic-bounding bounds.

pub mod agents;
pub mod autodiff;
pub mod envs;
pub mod mdpcheck;
pub mod nn;
pub mod svgd;
