//! Front end for the parametric MDP synthesis toolkit: plain-text model and
//! specification parsing plus run orchestration and artifact rendering.

pub mod fmt;
pub mod runner;
