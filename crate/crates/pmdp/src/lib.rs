//! Parameter synthesis for parametric MDPs against probability and
//! expected-cost thresholds.
//!
//! The pipeline: parse or build a [`model::ParametricMdp`], classify its graph
//! ([`graph`]), encode the synthesis query as a bilinear program ([`encode`]),
//! and drive one of the solvers in [`synth`] (convex-concave, sequential
//! convex, its regularized variant, or particle swarm), each certifying its
//! answer with the model checker in [`mc`].

pub mod encode;
pub mod gen;
pub mod graph;
pub mod mc;
pub mod model;
pub mod synth;
