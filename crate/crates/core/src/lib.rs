//! Online BEV mapping and trajectory prediction on synthetic driving scenes.
//!
//! * [`numgrad`]: tensors, reverse-mode autodiff and attention/pooling kernels.
//! * [`synthscene`]: seeded road worlds, camera rig, rendering and dataset files.
//! * [`pv2bev`]: attention-based and lift-splat BEV encoders with temporal fusion.
//! * [`mapdec`]: vectorized map decoder, Hungarian matching and map metrics.
//! * [`predict`]: lane-vector baseline and the three BEV-integration predictors.
//! * [`clibench`]: training, evaluation, latency benchmarks and BEV export.

pub mod clibench;
pub mod mapdec;
pub mod numgrad;
pub mod predict;
pub mod pv2bev;
pub mod synthscene;
