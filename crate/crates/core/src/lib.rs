//! Reverse-curriculum PPO: expert demonstrations on a seedable gridworld are
//! cut into start-state stages ordered backwards from the goal, and a PPO
//! agent is trained with episode resets restricted to the current stage.

pub mod curriculum;
pub mod expert;
pub mod gridworld;
pub mod metrics;
pub mod policy;
pub mod scheduler;
pub mod seeding;
pub mod trainer;
